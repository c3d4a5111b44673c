//! Closed-loop guidance simulation: at each guidance step the control
//! source is queried with `(t_g, x)`, the command is held (zero-order hold)
//! while the plant integrates with fixed-step RK4, and `t_g` is decremented
//! on the open-loop schedule until it reaches zero. The plant may fly with
//! perturbed parameters while the controller only ever sees nominal state.

use crate::error::Error;
use crate::mlp::{infer, MlpModel};
use crate::oracle::{shoot, ShootOptions};
use crate::problem::Problem;
use crate::Result;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

/// Source of guidance commands.
pub trait Controller: Send {
    fn name(&self) -> &str;
    fn control(&mut self, t_g: f64, x: &DVector<f64>) -> Result<DVector<f64>>;
}

pub struct MlpController {
    pub model: Arc<MlpModel>,
}

impl Controller for MlpController {
    fn name(&self) -> &str {
        "mlp"
    }
    fn control(&mut self, t_g: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        infer(&self.model, t_g, x)
    }
}

pub struct ZeroController {
    pub control_dim: usize,
}

impl Controller for ZeroController {
    fn name(&self) -> &str {
        "zero"
    }
    fn control(&mut self, _t_g: f64, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.control_dim))
    }
}

/// Closed-form double-integrator feedback.
pub struct AnalyticController;

impl Controller for AnalyticController {
    fn name(&self) -> &str {
        "analytic"
    }
    fn control(&mut self, t_g: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        crate::oracle::double_integrator_law(x, t_g)
    }
}

/// Re-solves the two-point problem by indirect shooting at every guidance
/// step, warm-started from the previous solution.
pub struct ShootingController {
    pub prob: Arc<dyn Problem>,
    pub opts: ShootOptions,
    warm: Option<DVector<f64>>,
}

impl ShootingController {
    pub fn new(prob: Arc<dyn Problem>, opts: ShootOptions) -> Self {
        Self { prob, opts, warm: None }
    }
}

impl Controller for ShootingController {
    fn name(&self) -> &str {
        "shooting"
    }
    fn control(&mut self, t_g: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.prob.dims().state;
        let guess = self.warm.clone().unwrap_or_else(|| DVector::zeros(n));
        let res = shoot(self.prob.as_ref(), x, t_g, &guess, &self.opts)?;
        if !res.converged {
            return Err(Error::ContractViolation(format!(
                "shooting controller failed to converge at t_g = {t_g:.6}"
            )));
        }
        self.warm = Some(res.p0.clone());
        self.prob.optimal_control(x, &res.p0)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Guidance update period (zero-order hold length).
    pub guidance_dt: f64,
    /// Plant RK4 step; must divide the guidance period.
    pub plant_step: f64,
    pub initial_state: DVector<f64>,
    pub t_g0: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_dt > 0.0 && self.guidance_dt.is_finite()) {
            return Err(Error::Config("sim.dt_guidance: must be positive".into()));
        }
        if !(self.plant_step > 0.0 && self.plant_step.is_finite()) {
            return Err(Error::Config("sim.plant_step: must be positive".into()));
        }
        let sub = self.guidance_dt / self.plant_step;
        if (sub - sub.round()).abs() > 1e-9 || sub < 1.0 {
            return Err(Error::Config(
                "sim.dt_guidance: must be a multiple of sim.plant_step".into(),
            ));
        }
        if !(self.t_g0 > 0.0 && self.t_g0.is_finite()) {
            return Err(Error::Config("sim.t_g0: must be positive".into()));
        }
        let updates = self.t_g0 / self.guidance_dt;
        if (updates - updates.round()).abs() > 1e-9 {
            return Err(Error::Config(
                "sim.t_g0: must be a multiple of sim.dt_guidance".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl LatencyStats {
    fn from_seconds(mut samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return Self { median: 0.0, mean: 0.0, max: 0.0 };
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = samples.len() / 2;
        let median = if samples.len() % 2 == 0 {
            0.5 * (samples[mid - 1] + samples[mid])
        } else {
            samples[mid]
        };
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Self { median, mean, max: *samples.last().unwrap() }
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    /// `(t, x, u)` at every guidance update.
    pub samples: Vec<(f64, DVector<f64>, DVector<f64>)>,
    pub terminal_state: DVector<f64>,
    /// `phi(x(t_f))` under the nominal problem.
    pub terminal_constraint: DVector<f64>,
    pub terminal_error: f64,
    /// Accumulated effort `integral w ||u||^2 dt`.
    pub effort: f64,
    pub latency: LatencyStats,
    pub aborted: bool,
    pub abort_reason: Option<String>,
}

/// Runs one closed-loop flight. `plant` carries the (possibly perturbed)
/// physical parameters; scoring uses the nominal problem's constraint.
pub fn run(
    nominal: &dyn Problem,
    plant: &dyn Problem,
    cfg: &SimConfig,
    controller: &mut dyn Controller,
) -> Result<SimResult> {
    cfg.validate()?;
    let n = nominal.dims().state;
    if cfg.initial_state.len() != n {
        return Err(Error::Config(format!(
            "sim.initial_state: expected {n} coordinates"
        )));
    }
    let updates = (cfg.t_g0 / cfg.guidance_dt).round() as usize;
    let substeps = (cfg.guidance_dt / cfg.plant_step).round() as usize;
    let weight = nominal.cost_weight();

    let mut x = cfg.initial_state.clone();
    let mut effort = 0.0f64;
    let mut samples = Vec::with_capacity(updates);
    let mut latencies = Vec::with_capacity(updates);
    let mut aborted = false;
    let mut abort_reason = None;

    'flight: for k in 0..updates {
        let t_g = cfg.t_g0 - k as f64 * cfg.guidance_dt;
        let clock = Instant::now();
        let u = match controller.control(t_g, &x) {
            Ok(u) => u,
            Err(e) => {
                aborted = true;
                abort_reason = Some(format!("controller: {e}"));
                break 'flight;
            }
        };
        latencies.push(clock.elapsed().as_secs_f64());
        samples.push((nominal.final_time() - t_g, x.clone(), u.clone()));

        // Hold the command and integrate the plant.
        for _ in 0..substeps {
            match rk4_plant_step(plant, &x, &u, cfg.plant_step) {
                Ok((next, de)) => {
                    x = next;
                    effort += weight * de;
                }
                Err(e) => {
                    aborted = true;
                    abort_reason = Some(format!("plant: {e}"));
                    break 'flight;
                }
            }
        }
    }

    let terminal_constraint = nominal.constraint(&x);
    Ok(SimResult {
        samples,
        terminal_error: terminal_constraint.norm(),
        terminal_constraint,
        terminal_state: x,
        effort,
        latency: LatencyStats::from_seconds(latencies),
        aborted,
        abort_reason,
    })
}

/// One RK4 step of the held-control plant; returns the new state and the
/// quadrature increment of `||u||^2`.
fn rk4_plant_step(
    plant: &dyn Problem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, f64)> {
    plant.check_state(x)?;
    let k1 = plant.dynamics(x, u);
    let k2 = plant.dynamics(&(x + &k1 * (0.5 * h)), u);
    let k3 = plant.dynamics(&(x + &k2 * (0.5 * h)), u);
    let k4 = plant.dynamics(&(x + &k3 * h), u);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::Propagation { last_t: 0.0, reason: "non-finite plant state".into() });
    }
    // The integrand ||u||^2 is constant over the hold, so the quadrature
    // increment is exact.
    Ok((next, u.norm_squared() * h))
}

/// Uniform dispersion of initial conditions and plant parameters.
#[derive(Debug, Clone)]
pub struct DispersionSpec {
    /// Absolute per-coordinate ranges of the initial state; empty keeps the
    /// base state.
    pub state_ranges: Vec<(f64, f64)>,
    /// Per-parameter ranges applied to the plant model.
    pub param_ranges: BTreeMap<String, (f64, f64)>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloSummary {
    pub results: Vec<SimResult>,
    pub max_terminal_error: f64,
    pub mean_terminal_error: f64,
    pub max_effort: f64,
    pub mean_effort: f64,
    pub aborted_runs: usize,
}

/// Histogram over uniform bins: `(bin_left, bin_right, count)`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// Warnings for dispersion ranges outside the dataset's coverage box.
pub fn coverage_warnings(
    dispersion: &DispersionSpec,
    coverage: &(Vec<(f64, f64)>, (f64, f64)),
    t_g0: f64,
) -> Vec<String> {
    let mut warnings = Vec::new();
    let (boxes, t_range) = coverage;
    for (i, (lo, hi)) in dispersion.state_ranges.iter().enumerate() {
        if i >= boxes.len() {
            break;
        }
        if *lo < boxes[i].0 || *hi > boxes[i].1 {
            warnings.push(format!(
                "state coordinate {i}: dispersion [{lo}, {hi}] exceeds dataset coverage [{:.6}, {:.6}]",
                boxes[i].0, boxes[i].1
            ));
        }
    }
    if t_g0 > t_range.1 + 1e-12 {
        warnings.push(format!(
            "t_g0 = {t_g0} exceeds the largest trained time-to-go {:.6}",
            t_range.1
        ));
    }
    warnings
}

/// Seeded batch of dispersed closed-loop runs. Draws are taken up front in
/// run order, so the output is independent of worker scheduling.
pub fn monte_carlo(
    nominal: &dyn Problem,
    base: &SimConfig,
    dispersion: &DispersionSpec,
    n_runs: usize,
    controller_factory: &(dyn Fn() -> Box<dyn Controller> + Sync),
    plant_factory: &dyn Fn(&BTreeMap<String, f64>) -> Result<Arc<dyn Problem>>,
) -> Result<MonteCarloSummary> {
    base.validate()?;
    if !dispersion.state_ranges.is_empty()
        && dispersion.state_ranges.len() != nominal.dims().state
    {
        return Err(Error::Config(format!(
            "monte_carlo.state_ranges: expected {} ranges",
            nominal.dims().state
        )));
    }
    for (name, (lo, hi)) in &dispersion.param_ranges {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("monte_carlo.param_ranges.{name}: bad range")));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(dispersion.seed);
    let mut draws = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let state = if dispersion.state_ranges.is_empty() {
            base.initial_state.clone()
        } else {
            DVector::from_iterator(
                dispersion.state_ranges.len(),
                dispersion
                    .state_ranges
                    .iter()
                    .map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>()),
            )
        };
        let params: BTreeMap<String, f64> = dispersion
            .param_ranges
            .iter()
            .map(|(k, &(lo, hi))| (k.clone(), lo + (hi - lo) * rng.gen::<f64>()))
            .collect();
        draws.push((state, params));
    }

    let plants: Vec<Arc<dyn Problem>> = draws
        .iter()
        .map(|(_, params)| plant_factory(params))
        .collect::<Result<_>>()?;

    let results: Vec<SimResult> = draws
        .par_iter()
        .zip(plants.par_iter())
        .map(|((state, _), plant)| {
            let cfg = SimConfig { initial_state: state.clone(), ..base.clone() };
            let mut controller = controller_factory();
            run(nominal, plant.as_ref(), &cfg, controller.as_mut())
        })
        .collect::<Result<_>>()?;

    let finished: Vec<&SimResult> = results.iter().filter(|r| !r.aborted).collect();
    let count = finished.len().max(1) as f64;
    Ok(MonteCarloSummary {
        max_terminal_error: finished.iter().map(|r| r.terminal_error).fold(0.0, f64::max),
        mean_terminal_error: finished.iter().map(|r| r.terminal_error).sum::<f64>() / count,
        max_effort: finished.iter().map(|r| r.effort).fold(0.0, f64::max),
        mean_effort: finished.iter().map(|r| r.effort).sum::<f64>() / count,
        aborted_runs: results.iter().filter(|r| r.aborted).count(),
        results,
    })
}
