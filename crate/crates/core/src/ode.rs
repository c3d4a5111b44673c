//! Explicit Runge-Kutta propagation of the extremal and variational systems.
//!
//! Two steppers: classic fixed-step RK4 for deterministic plant simulation,
//! and the Dormand-Prince 5(4) pair with FSAL for accuracy-driven work.
//! Dense output between accepted steps is cubic Hermite (4th-order
//! accurate), which is what the uniform output grid and the conjugate-point
//! bisection sample. An observer runs once per accepted step and may stop
//! the propagation anywhere inside that step.

use crate::error::Error;
use crate::Result;
use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Rk4Fixed { step: f64 },
    Rk45Adaptive { rel_tol: f64, abs_tol: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub method: Method,
    pub max_steps: usize,
    /// Spacing of the uniform output grid; `None` keeps only the endpoints.
    pub output_dt: Option<f64>,
}

impl IntegratorConfig {
    /// Accuracy-driven default used for extremal generation.
    pub fn adaptive(rel_tol: f64, abs_tol: f64, output_dt: Option<f64>) -> Self {
        Self {
            method: Method::Rk45Adaptive { rel_tol, abs_tol },
            max_steps: 10_000_000,
            output_dt,
        }
    }

    pub fn fixed(step: f64, output_dt: Option<f64>) -> Self {
        Self { method: Method::Rk4Fixed { step }, max_steps: 10_000_000, output_dt }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Rk4Fixed { step } => {
                if !(step.is_finite() && step > 0.0) {
                    return Err(Error::Config("integrator.step: must be positive".into()));
                }
            }
            Method::Rk45Adaptive { rel_tol, abs_tol } => {
                if !(rel_tol.is_finite() && rel_tol > 0.0 && abs_tol.is_finite() && abs_tol > 0.0)
                {
                    return Err(Error::Config(
                        "integrator.rel_tol/abs_tol: must be positive".into(),
                    ));
                }
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Config("integrator.max_steps: must be positive".into()));
        }
        if let Some(dt) = self.output_dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Config("integrator.output_dt: must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One accepted integration step, with enough context to interpolate inside.
pub struct AcceptedStep<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a DVector<f64>,
    pub y1: &'a DVector<f64>,
    pub f0: &'a DVector<f64>,
    pub f1: &'a DVector<f64>,
}

impl AcceptedStep<'_> {
    /// Cubic Hermite interpolation at `t` in `[t0, t1]`.
    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        hermite(self.t0, self.t1, self.y0, self.y1, self.f0, self.f1, t)
    }
}

#[allow(clippy::too_many_arguments)]
fn hermite(
    t0: f64,
    t1: f64,
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    f0: &DVector<f64>,
    f1: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let h = t1 - t0;
    let theta = (t - t0) / h;
    let om = 1.0 - theta;
    let h00 = (1.0 + 2.0 * theta) * om * om;
    let h10 = theta * om * om;
    let h01 = theta * theta * (3.0 - 2.0 * theta);
    let h11 = theta * theta * (theta - 1.0);
    y0 * h00 + f0 * (h10 * h) + y1 * h01 + f1 * (h11 * h)
}

/// Observer verdict after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObserverAction {
    Continue,
    /// Truncate the trajectory at the given time inside the current step.
    StopAt(f64),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    /// Uniform-grid samples, including both endpoints.
    pub samples: Vec<Sample>,
    pub end_t: f64,
    pub end_y: DVector<f64>,
    pub accepted_steps: usize,
    pub stopped_early: bool,
}

/// Integrates `dy/dt = rhs(t, y)` over `span` and samples the result on the
/// uniform output grid. The observer is called once per accepted step.
pub fn propagate<F, O>(
    mut rhs: F,
    y0: &DVector<f64>,
    span: (f64, f64),
    cfg: &IntegratorConfig,
    mut observer: O,
) -> Result<Propagation>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    O: FnMut(&AcceptedStep<'_>) -> ObserverAction,
{
    cfg.validate()?;
    let (t_start, t_end) = span;
    if !(t_start.is_finite() && t_end.is_finite()) || t_start == t_end {
        return Err(Error::Config("integrator: span must be finite and nonempty".into()));
    }
    let dir = (t_end - t_start).signum();

    let mut emitter = GridEmitter::new(t_start, cfg.output_dt, dir, y0.clone());
    let mut t = t_start;
    let mut y = y0.clone();
    let mut f = rhs(t, &y).map_err(|e| propagation_err(t, e))?;

    let mut h = match cfg.method {
        Method::Rk4Fixed { step } => step * dir,
        Method::Rk45Adaptive { .. } => (t_end - t_start) * 1e-3,
    };
    let mut accepted = 0usize;
    let mut attempts = 0usize;

    loop {
        if (t - t_end) * dir >= 0.0 {
            break;
        }
        attempts += 1;
        if attempts > cfg.max_steps {
            return Err(Error::Propagation {
                last_t: t,
                reason: format!("max_steps = {} exceeded", cfg.max_steps),
            });
        }
        // Fixed stepping always restarts from the nominal step.
        if let Method::Rk4Fixed { step } = cfg.method {
            h = step * dir;
        }
        // Do not step past the end of the span.
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Propagation { last_t: t, reason: "step size underflow".into() });
        }

        let step_result = match cfg.method {
            Method::Rk4Fixed { .. } => {
                let y1 = rk4_step(&mut rhs, t, &y, &f, h).map_err(|e| propagation_err(t, e))?;
                let f1 = rhs(t + h, &y1).map_err(|e| propagation_err(t, e))?;
                Some((y1, f1, h))
            }
            Method::Rk45Adaptive { rel_tol, abs_tol } => {
                let (y1, f1, err) =
                    dopri5_step(&mut rhs, t, &y, &f, h).map_err(|e| propagation_err(t, e))?;
                let scaled = error_norm(&y, &y1, &err, rel_tol, abs_tol);
                let factor = if scaled > 0.0 {
                    (0.9 * scaled.powf(-0.2)).clamp(0.2, 5.0)
                } else {
                    5.0
                };
                if scaled <= 1.0 {
                    let h_used = h;
                    h *= factor;
                    Some((y1, f1, h_used))
                } else {
                    h *= factor.min(0.9);
                    None
                }
            }
        };

        let Some((y1, f1, h_used)) = step_result else { continue };
        if !y1.iter().all(|v| v.is_finite()) {
            return Err(Error::Propagation { last_t: t, reason: "non-finite state".into() });
        }
        accepted += 1;
        let mut t1 = t + h_used;
        // Snap to the span end once accumulation noise is all that remains.
        if (t1 - t_end).abs() < 1e-12 * t_end.abs().max(1.0) {
            t1 = t_end;
        }
        let step = AcceptedStep { t0: t, t1, y0: &y, y1: &y1, f0: &f, f1: &f1 };

        match observer(&step) {
            ObserverAction::Continue => {
                emitter.advance(&step, t1);
                t = t1;
                y = y1;
                f = f1;
            }
            ObserverAction::StopAt(t_stop) => {
                let t_stop = if dir > 0.0 {
                    t_stop.clamp(t, t1)
                } else {
                    t_stop.clamp(t1, t)
                };
                emitter.advance(&step, t_stop);
                let end_y = if (t_stop - t1).abs() < 1e-15 * t1.abs().max(1.0) {
                    y1
                } else {
                    step.interpolate(t_stop)
                };
                emitter.finish(t_stop, &end_y);
                return Ok(Propagation {
                    samples: emitter.samples,
                    end_t: t_stop,
                    end_y,
                    accepted_steps: accepted,
                    stopped_early: true,
                });
            }
        }
    }

    emitter.finish(t, &y);
    Ok(Propagation {
        samples: emitter.samples,
        end_t: t,
        end_y: y,
        accepted_steps: accepted,
        stopped_early: false,
    })
}

fn propagation_err(last_t: f64, e: Error) -> Error {
    match e {
        Error::Propagation { .. } => e,
        other => Error::Propagation { last_t, reason: other.to_string() },
    }
}

/// Emits grid samples `t_start + k * dt` as accepted steps cover them.
struct GridEmitter {
    samples: Vec<Sample>,
    t_start: f64,
    dt: Option<f64>,
    dir: f64,
    next_index: usize,
}

impl GridEmitter {
    fn new(t_start: f64, dt: Option<f64>, dir: f64, y_start: DVector<f64>) -> Self {
        Self {
            samples: vec![Sample { t: t_start, y: y_start }],
            t_start,
            dt,
            dir,
            next_index: 1,
        }
    }

    fn grid_t(&self, k: usize) -> Option<f64> {
        self.dt.map(|dt| self.t_start + k as f64 * dt * self.dir)
    }

    /// Emit every grid point covered by `step` up to `limit` (inclusive,
    /// with a tiny tolerance so exact endpoints come from the step itself).
    fn advance(&mut self, step: &AcceptedStep<'_>, limit: f64) {
        while let Some(tg) = self.grid_t(self.next_index) {
            let tol = 1e-12 * tg.abs().max(1.0);
            if (tg - limit) * self.dir > tol {
                break;
            }
            let y = if (tg - step.t1).abs() <= tol {
                step.y1.clone()
            } else {
                step.interpolate(tg)
            };
            self.samples.push(Sample { t: tg, y });
            self.next_index += 1;
        }
    }

    /// Append the final endpoint unless the last grid sample already is it.
    fn finish(&mut self, t_end: f64, y_end: &DVector<f64>) {
        let tol = 1e-12 * t_end.abs().max(1.0);
        if self
            .samples
            .last()
            .map(|s| (s.t - t_end).abs() > tol)
            .unwrap_or(true)
        {
            self.samples.push(Sample { t: t_end, y: y_end.clone() });
        }
    }
}

fn rk4_step<F>(rhs: &mut F, t: f64, y: &DVector<f64>, f0: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f0;
    let k2 = rhs(t + 0.5 * h, &(y + k1 * (0.5 * h)))?;
    let k3 = rhs(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = rhs(t + h, &(y + &k3 * h))?;
    Ok(y + (k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0))
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat: weights of the embedded error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

type Dopri5Out = (DVector<f64>, DVector<f64>, DVector<f64>);

fn dopri5_step<F>(
    rhs: &mut F,
    t: f64,
    y: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
) -> Result<Dopri5Out>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k2 = rhs(t + h / 5.0, &(y + k1 * (A21 * h)))?;
    let k3 = rhs(t + 3.0 * h / 10.0, &(y + k1 * (A31 * h) + &k2 * (A32 * h)))?;
    let k4 = rhs(
        t + 4.0 * h / 5.0,
        &(y + k1 * (A41 * h) + &k2 * (A42 * h) + &k3 * (A43 * h)),
    )?;
    let k5 = rhs(
        t + 8.0 * h / 9.0,
        &(y + k1 * (A51 * h) + &k2 * (A52 * h) + &k3 * (A53 * h) + &k4 * (A54 * h)),
    )?;
    let k6 = rhs(
        t + h,
        &(y + k1 * (A61 * h)
            + &k2 * (A62 * h)
            + &k3 * (A63 * h)
            + &k4 * (A64 * h)
            + &k5 * (A65 * h)),
    )?;
    let y1 = y + k1 * (B1 * h) + &k3 * (B3 * h) + &k4 * (B4 * h) + &k5 * (B5 * h) + &k6 * (B6 * h);
    // FSAL stage: derivative at the step end, reused as the next k1.
    let k7 = rhs(t + h, &y1)?;
    let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    Ok((y1, k7, err))
}

fn error_norm(
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    err: &DVector<f64>,
    rel_tol: f64,
    abs_tol: f64,
) -> f64 {
    let n = y0.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sc = abs_tol + rel_tol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}
