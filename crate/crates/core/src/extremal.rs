//! The parameterized family of Hamiltonian extremals.
//!
//! Each terminal sample `(x_f, p_f)` with `p_f = nu . grad phi(x_f)` seeds a
//! backward propagation of the canonical flow (state and costate with the
//! maximizing control substituted), jointly with the linear variational
//! equations for the sensitivity matrices `dX/dq` and `dP/dq` of the flow
//! with respect to the terminal parameters `q`. The first time-to-go at
//! which `det dX/dq` vanishes after the structural zero at the terminal
//! point is the conjugate time `T_c`; the extremal is truncated at
//! `T = min(t_f, T_c)`, inside which it is at least locally optimal.

use crate::error::Error;
use crate::ode::{propagate, AcceptedStep, IntegratorConfig, ObserverAction, Propagation};
use crate::problem::{
    legendre_holds, reduced_gradients, reduced_second_derivatives, PhasePoint, Problem,
};
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// A point of the terminal Lagrangian manifold.
///
/// The costate is always derived from the multipliers, never free-form, so
/// the transversality condition holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSample {
    pub x_f: DVector<f64>,
    /// Lagrange multipliers (a row vector by convention).
    pub nu: DVector<f64>,
    /// Terminal costate `nu . grad phi(x_f)`.
    pub p_f: DVector<f64>,
}

impl TerminalSample {
    pub fn new(prob: &dyn Problem, x_f: DVector<f64>, nu: DVector<f64>) -> Result<Self> {
        let dims = prob.dims();
        if x_f.len() != dims.state || nu.len() != dims.constraint {
            return Err(Error::ContractViolation(format!(
                "terminal sample dims: expected state {} / multipliers {}",
                dims.state, dims.constraint
            )));
        }
        prob.check_state(&x_f)?;
        let defect = prob.constraint(&x_f).amax();
        if !(defect < 1e-12) {
            return Err(Error::ContractViolation(format!(
                "terminal state off the manifold: |phi|_inf = {defect:.3e}"
            )));
        }
        let p_f = prob.constraint_gradient(&x_f).transpose() * &nu;
        Ok(Self { x_f, nu, p_f })
    }

    /// Builds the sample from chart coordinates on the terminal manifold.
    pub fn from_free_coords(prob: &dyn Problem, free: &[f64], nu: DVector<f64>) -> Result<Self> {
        let dims = prob.dims();
        if free.len() != dims.state - dims.constraint {
            return Err(Error::ContractViolation(format!(
                "expected {} free terminal coordinates, got {}",
                dims.state - dims.constraint,
                free.len()
            )));
        }
        Self::new(prob, prob.terminal_state(free), nu)
    }

    pub fn phase(&self) -> PhasePoint {
        PhasePoint::new(self.x_f.clone(), self.p_f.clone())
    }
}

/// One stored sample of an extremal, indexed by time-to-go.
#[derive(Debug, Clone)]
pub struct ExtremalPoint {
    pub sigma: f64,
    pub x: DVector<f64>,
    pub p: DVector<f64>,
    pub u: DVector<f64>,
    /// Integral of the running cost from the terminal point back to `sigma`.
    pub cost_to_go: f64,
}

/// A backward-propagated extremal, truncated at `T = min(t_f, T_c)`.
#[derive(Debug, Clone)]
pub struct ExtremalTrajectory {
    pub terminal: TerminalSample,
    pub horizon: f64,
    pub conjugate_time: Option<f64>,
    /// Grid samples ordered by time-to-go in `(0, T]`.
    pub samples: Vec<ExtremalPoint>,
    /// `(sigma, det dX/dq)` at every accepted integrator step.
    pub det_trace: Vec<(f64, f64)>,
}

/// Flow direction of the canonical equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Physical time: `x_dot = dh/dp`, `p_dot = -dh/dx`.
    Forward,
    /// Time-to-go: the sign-reversed field, seeded at the terminal point.
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Layout of the flat integration vector: `[x; p; vec dX; vec dP; cost]`,
/// matrices column-major, the variational block optional.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedCodec {
    pub n: usize,
    pub variational: bool,
}

impl AugmentedCodec {
    pub fn new(n: usize, variational: bool) -> Self {
        Self { n, variational }
    }

    pub fn len(&self) -> usize {
        2 * self.n + if self.variational { 2 * self.n * self.n } else { 0 } + 1
    }

    pub fn pack(
        &self,
        x: &DVector<f64>,
        p: &DVector<f64>,
        dx: Option<&DMatrix<f64>>,
        dp: Option<&DMatrix<f64>>,
        cost: f64,
    ) -> DVector<f64> {
        let n = self.n;
        let mut y = DVector::zeros(self.len());
        y.rows_mut(0, n).copy_from(x);
        y.rows_mut(n, n).copy_from(p);
        if self.variational {
            let dx = dx.expect("variational layout needs dX");
            let dp = dp.expect("variational layout needs dP");
            y.rows_mut(2 * n, n * n).copy_from_slice(dx.as_slice());
            y.rows_mut(2 * n + n * n, n * n).copy_from_slice(dp.as_slice());
        }
        y[self.len() - 1] = cost;
        y
    }

    pub fn state(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, self.n).into_owned()
    }

    pub fn costate(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.n, self.n).into_owned()
    }

    pub fn phase(&self, y: &DVector<f64>) -> PhasePoint {
        PhasePoint::new(self.state(y), self.costate(y))
    }

    pub fn dx(&self, y: &DVector<f64>) -> DMatrix<f64> {
        debug_assert!(self.variational);
        let n = self.n;
        DMatrix::from_column_slice(n, n, &y.as_slice()[2 * n..2 * n + n * n])
    }

    pub fn dp(&self, y: &DVector<f64>) -> DMatrix<f64> {
        debug_assert!(self.variational);
        let n = self.n;
        DMatrix::from_column_slice(n, n, &y.as_slice()[2 * n + n * n..2 * n + 2 * n * n])
    }

    pub fn cost(&self, y: &DVector<f64>) -> f64 {
        y[self.len() - 1]
    }
}

/// Phase velocity of the backward flow: `(-dh/dp, +dh/dx)`.
pub fn backward_rhs(prob: &dyn Problem, pt: &PhasePoint) -> Result<(DVector<f64>, DVector<f64>)> {
    let (g_x, g_p) = reduced_gradients(prob, pt)?;
    Ok((-g_p, g_x))
}

/// Phase velocity of the forward canonical flow: `(dh/dp, -dh/dx)`.
pub fn forward_rhs(prob: &dyn Problem, pt: &PhasePoint) -> Result<(DVector<f64>, DVector<f64>)> {
    let (g_x, g_p) = reduced_gradients(prob, pt)?;
    Ok((g_p, -g_x))
}

/// Matrix velocities of the variational system along the backward flow:
/// `dX' = -H_px dX - H_pp dP`, `dP' = H_xx dX + H_xp dP`.
pub fn variational_rhs(
    prob: &dyn Problem,
    pt: &PhasePoint,
    dx: &DMatrix<f64>,
    dp: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let h = reduced_second_derivatives(prob, pt)?;
    let h_px = h.h_px();
    Ok((-(&h_px * dx) - &h.h_pp * dp, &h.h_xx * dx + &h.h_xp * dp))
}

/// Right-hand side of the flattened system in the given direction.
pub fn augmented_rhs(
    prob: &dyn Problem,
    codec: &AugmentedCodec,
    direction: Direction,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sign = direction.sign();
    let pt = codec.phase(y);
    prob.check_state(&pt.x)?;
    let u = prob.optimal_control(&pt.x, &pt.p)?;
    let f = prob.dynamics(&pt.x, &u);
    let jac = prob.dynamics_jacobian(&pt.x, &u);
    let g_x = jac.transpose() * &pt.p;

    let n = codec.n;
    let mut dy = DVector::zeros(codec.len());
    dy.rows_mut(0, n).copy_from(&(&f * sign));
    dy.rows_mut(n, n).copy_from(&(&g_x * -sign));
    if codec.variational {
        let h = reduced_second_derivatives(prob, &pt)?;
        let dx = codec.dx(y);
        let dp = codec.dp(y);
        let dx_dot = (h.h_px() * &dx + &h.h_pp * &dp) * sign;
        let dp_dot = (&h.h_xx * &dx + &h.h_xp * &dp) * -sign;
        dy.rows_mut(2 * n, n * n).copy_from_slice(dx_dot.as_slice());
        dy.rows_mut(2 * n + n * n, n * n).copy_from_slice(dp_dot.as_slice());
    }
    // Quadrature of the running cost, accumulated along either direction.
    dy[codec.len() - 1] = prob.cost_weight() * u.norm_squared();
    Ok(dy)
}

/// Variational initial conditions for a fully constrained terminal state
/// (`s = n`): the parameter is the terminal costate itself.
pub fn initial_conditions_full(
    prob: &dyn Problem,
    _sample: &TerminalSample,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dims = prob.dims();
    if dims.constraint != dims.state {
        return Err(Error::ContractViolation(
            "initial_conditions_full requires s = n".into(),
        ));
    }
    let n = dims.state;
    Ok((DMatrix::zeros(n, n), DMatrix::identity(n, n)))
}

/// Orthonormal basis of `ker grad phi(x)` by modified Gram-Schmidt on the
/// projected standard basis, columns in state-coordinate order.
pub fn kernel_basis(prob: &dyn Problem, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let dims = prob.dims();
    let (n, s) = (dims.state, dims.constraint);
    let grad = prob.constraint_gradient(x);
    let gram = &grad * grad.transpose();
    let gram_inv = gram.clone().try_inverse().ok_or_else(|| {
        Error::AssumptionViolation("grad phi grad phi^T is singular (rank deficiency)".into())
    })?;
    let projector = DMatrix::identity(n, n) - grad.transpose() * gram_inv * &grad;

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - s);
    for j in 0..n {
        let mut v = projector.column(j).into_owned();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm > 1e-10 {
            basis.push(v / norm);
        }
    }
    if basis.len() != n - s {
        return Err(Error::AssumptionViolation(format!(
            "kernel of grad phi has dimension {}, expected {}",
            basis.len(),
            n - s
        )));
    }
    Ok(DMatrix::from_columns(&basis))
}

/// Variational initial conditions for `s < n`: columns are the tangent
/// directions of the terminal manifold chart followed by the multiplier
/// directions.
pub fn initial_conditions_partial(
    prob: &dyn Problem,
    sample: &TerminalSample,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dims = prob.dims();
    let (n, s) = (dims.state, dims.constraint);
    if s >= n {
        return Err(Error::ContractViolation(
            "initial_conditions_partial requires s < n".into(),
        ));
    }
    let grad = prob.constraint_gradient(&sample.x_f);
    let gram = &grad * grad.transpose();
    let gram_inv = gram.try_inverse().ok_or_else(|| {
        Error::AssumptionViolation("grad phi grad phi^T is singular (rank deficiency)".into())
    })?;
    // Multipliers recovered from the costate; equals `sample.nu` when the
    // sample was built through the transversality condition.
    let nu_bar = gram_inv * (&grad * &sample.p_f);

    let kernel = kernel_basis(prob, &sample.x_f)?;
    let hess = prob.constraint_hessian_contraction(&nu_bar, &sample.x_f);

    let mut dx0 = DMatrix::zeros(n, n);
    dx0.columns_mut(0, n - s).copy_from(&kernel);
    let mut dp0 = DMatrix::zeros(n, n);
    dp0.columns_mut(0, n - s).copy_from(&(&hess * &kernel));
    dp0.columns_mut(n - s, s).copy_from(&grad.transpose());
    Ok((dx0, dp0))
}

fn initial_conditions(
    prob: &dyn Problem,
    sample: &TerminalSample,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dims = prob.dims();
    if dims.constraint == dims.state {
        initial_conditions_full(prob, sample)
    } else {
        initial_conditions_partial(prob, sample)
    }
}

/// Shifts a terminal sample along one parameter direction: the first
/// `n - s` directions move the terminal state along the kernel basis, the
/// remaining `s` perturb the multipliers. Used by finite-difference checks
/// of the variational flow.
pub fn perturbed_terminal_sample(
    prob: &dyn Problem,
    sample: &TerminalSample,
    direction: usize,
    delta: f64,
) -> Result<TerminalSample> {
    let dims = prob.dims();
    let (n, s) = (dims.state, dims.constraint);
    if direction >= n {
        return Err(Error::ContractViolation(format!(
            "parameter direction {direction} out of range for n = {n}"
        )));
    }
    if s == n {
        // q = p_f - p_f_bar: perturb the costate coordinate directly.
        let mut p_f = sample.p_f.clone();
        p_f[direction] += delta;
        let grad = prob.constraint_gradient(&sample.x_f);
        let nu = grad
            .transpose()
            .lu()
            .solve(&p_f)
            .ok_or_else(|| Error::AssumptionViolation("grad phi singular".into()))?;
        return TerminalSample::new(prob, sample.x_f.clone(), nu);
    }
    if direction < n - s {
        let kernel = kernel_basis(prob, &sample.x_f)?;
        let x_f = &sample.x_f + kernel.column(direction) * delta;
        TerminalSample::new(prob, x_f, sample.nu.clone())
    } else {
        let mut nu = sample.nu.clone();
        nu[direction - (n - s)] += delta;
        TerminalSample::new(prob, sample.x_f.clone(), nu)
    }
}

/// Determinant of a column-rescaled copy (each column divided by its sup
/// norm) together with the raw determinant reconstructed from the scales.
fn column_scaled_det(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.ncols();
    let mut scaled = m.clone();
    let mut prod = 1.0f64;
    for j in 0..n {
        let s = scaled.column(j).amax();
        if s == 0.0 {
            return (0.0, 0.0);
        }
        scaled.column_mut(j).scale_mut(1.0 / s);
        prod *= s;
    }
    let ds = scaled.determinant();
    (ds * prod, ds)
}

/// Conjugate-point detection parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConjugateConfig {
    /// Window after the terminal point excluded from detection, as a
    /// fraction of the final time (skips the structural zero of the
    /// determinant at `sigma = 0`).
    pub eps_excl_factor: f64,
    /// Relative rank threshold on the running determinant maximum.
    pub delta_rank: f64,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        Self { eps_excl_factor: 1e-3, delta_rank: 1e-9 }
    }
}

/// Incremental scan of a determinant trace for the first conjugate event.
struct ConjugateScan {
    eps_excl: f64,
    delta_rank: f64,
    running_max: f64,
    prev: Option<(f64, f64)>,
    seen: bool,
}

impl ConjugateScan {
    fn new(eps_excl: f64, delta_rank: f64) -> Self {
        Self { eps_excl, delta_rank, running_max: 0.0, prev: None, seen: false }
    }

    /// Feeds the next trace point; `eval` must evaluate the determinant
    /// anywhere between the previous point and `sigma`.
    fn feed(&mut self, sigma: f64, det: f64, eval: impl Fn(f64) -> f64) -> Option<f64> {
        let prev = self.prev;
        self.prev = Some((sigma, det));
        if sigma <= self.eps_excl {
            return None;
        }
        let (left_s, left_d) = match prev {
            None => {
                self.seen = true;
                self.running_max = det.abs();
                return None;
            }
            Some((ps, pd)) => {
                if ps > self.eps_excl {
                    (ps, pd)
                } else {
                    (self.eps_excl, eval(self.eps_excl))
                }
            }
        };
        if !self.seen {
            self.running_max = self.running_max.max(left_d.abs());
            self.seen = true;
        }
        if left_d != 0.0 && left_d * det <= 0.0 {
            return Some(bisect(left_s, sigma, &eval));
        }
        let threshold = self.delta_rank * self.running_max;
        if threshold > 0.0 && det.abs() < threshold && left_d.abs() >= threshold {
            return Some(bisect(left_s, sigma, |s| eval(s).abs() - threshold));
        }
        self.running_max = self.running_max.max(det.abs());
        None
    }

    fn finish(self) -> Result<Option<f64>> {
        if !self.seen {
            return Ok(None);
        }
        if self.running_max < self.delta_rank {
            return Err(Error::DegenerateFamily);
        }
        Ok(None)
    }
}

/// Bisection to 1e-8 absolute on a bracketed sign change of `f`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_lo * f_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

/// Locates the first conjugate time in a determinant trace: the smallest
/// `sigma > eps_excl` where the determinant changes sign or drops below
/// `delta_rank` times its running maximum. `eval` refines the bracketing
/// interval (the caller supplies interpolation into its trace).
///
/// A trace that stays at `|det| < delta_rank` beyond the window signals a
/// degenerate family.
pub fn detect_conjugate_time(
    trace: &[(f64, f64)],
    eps_excl: f64,
    delta_rank: f64,
    eval: impl Fn(f64) -> f64,
) -> Result<Option<f64>> {
    let mut scan = ConjugateScan::new(eps_excl, delta_rank);
    for &(sigma, det) in trace {
        if let Some(tc) = scan.feed(sigma, det, &eval) {
            return Ok(Some(tc));
        }
    }
    scan.finish()
}

/// Extremal construction options.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub integrator: IntegratorConfig,
    /// Propagate the variational matrices (required for detection).
    pub variational: bool,
    /// Stop at the conjugate time instead of integrating to `t_f`.
    pub detect_conjugate: bool,
    pub conjugate: ConjugateConfig,
    /// Verify the strengthened Legendre condition at every stored sample.
    pub check_legendre: bool,
}

impl BuildConfig {
    pub fn new(integrator: IntegratorConfig) -> Self {
        Self {
            integrator,
            variational: true,
            detect_conjugate: true,
            conjugate: ConjugateConfig::default(),
            check_legendre: true,
        }
    }

    /// Phase-only propagation (no variational matrices, no detection).
    pub fn phase_only(integrator: IntegratorConfig) -> Self {
        Self {
            integrator,
            variational: false,
            detect_conjugate: false,
            conjugate: ConjugateConfig::default(),
            check_legendre: false,
        }
    }
}

struct BackwardRun {
    propagation: Propagation,
    codec: AugmentedCodec,
    det_trace: Vec<(f64, f64)>,
    conjugate_time: Option<f64>,
}

fn run_backward(prob: &dyn Problem, sample: &TerminalSample, cfg: &BuildConfig) -> Result<BackwardRun> {
    if cfg.detect_conjugate && !cfg.variational {
        return Err(Error::ContractViolation(
            "conjugate detection requires variational propagation".into(),
        ));
    }
    let n = prob.dims().state;
    let t_f = prob.final_time();
    let codec = AugmentedCodec::new(n, cfg.variational);

    let y0 = if cfg.variational {
        let (dx0, dp0) = initial_conditions(prob, sample)?;
        codec.pack(&sample.x_f, &sample.p_f, Some(&dx0), Some(&dp0), 0.0)
    } else {
        codec.pack(&sample.x_f, &sample.p_f, None, None, 0.0)
    };

    let mut det_trace = Vec::new();
    let mut scan = ConjugateScan::new(cfg.conjugate.eps_excl_factor * t_f, cfg.conjugate.delta_rank);
    let mut conjugate_time = None;
    if cfg.variational {
        let (raw0, scaled0) = column_scaled_det(&codec.dx(&y0));
        det_trace.push((0.0, raw0));
        scan.feed(0.0, scaled0, |_| scaled0);
    }

    let rhs = |_t: f64, y: &DVector<f64>| augmented_rhs(prob, &codec, Direction::Backward, y);
    let observer = |step: &AcceptedStep<'_>| {
        if !cfg.variational {
            return ObserverAction::Continue;
        }
        let (raw, scaled) = column_scaled_det(&codec.dx(step.y1));
        det_trace.push((step.t1, raw));
        if cfg.detect_conjugate {
            let eval = |s: f64| column_scaled_det(&codec.dx(&step.interpolate(s))).1;
            if let Some(tc) = scan.feed(step.t1, scaled, eval) {
                conjugate_time = Some(tc);
                return ObserverAction::StopAt(tc);
            }
        }
        ObserverAction::Continue
    };

    let propagation = propagate(rhs, &y0, (0.0, t_f), &cfg.integrator, observer)?;
    if cfg.detect_conjugate && conjugate_time.is_none() {
        // Surfaces the degenerate-family diagnosis for traces that never grew.
        scan.finish()?;
    }
    Ok(BackwardRun { propagation, codec, det_trace, conjugate_time })
}

/// Builds one truncated extremal from a terminal sample.
pub fn build_extremal(
    prob: &dyn Problem,
    sample: &TerminalSample,
    cfg: &BuildConfig,
) -> Result<ExtremalTrajectory> {
    let run = run_backward(prob, sample, cfg)?;
    let codec = run.codec;

    let mut samples = Vec::with_capacity(run.propagation.samples.len());
    for s in &run.propagation.samples {
        if s.t <= 0.0 {
            continue;
        }
        let x = codec.state(&s.y);
        let p = codec.costate(&s.y);
        let u = prob.optimal_control(&x, &p)?;
        if cfg.check_legendre {
            let pt = PhasePoint::new(x.clone(), p.clone());
            if !legendre_holds(prob, &pt)? {
                return Err(Error::SingularControl(format!(
                    "Legendre condition fails at sigma = {:.6}",
                    s.t
                )));
            }
        }
        samples.push(ExtremalPoint {
            sigma: s.t,
            x,
            p,
            u,
            cost_to_go: codec.cost(&s.y),
        });
    }

    Ok(ExtremalTrajectory {
        terminal: sample.clone(),
        horizon: run.propagation.end_t,
        conjugate_time: run.conjugate_time,
        samples,
        det_trace: run.det_trace,
    })
}

/// Backward-propagates the augmented system and returns `(sigma, dX, dP)`
/// at the output grid. Used by the finite-difference cross-checks of the
/// variational flow.
pub fn variational_states(
    prob: &dyn Problem,
    sample: &TerminalSample,
    cfg: &BuildConfig,
) -> Result<Vec<(f64, DMatrix<f64>, DMatrix<f64>)>> {
    let mut cfg = cfg.clone();
    cfg.variational = true;
    let run = run_backward(prob, sample, &cfg)?;
    Ok(run
        .propagation
        .samples
        .iter()
        .map(|s| (s.t, run.codec.dx(&s.y), run.codec.dp(&s.y)))
        .collect())
}

/// Forward-propagates the phase flow (with cost quadrature) from a point for
/// a given duration; returns grid samples of `[x; p; cost]`.
pub fn propagate_phase(
    prob: &dyn Problem,
    start: &PhasePoint,
    duration: f64,
    direction: Direction,
    integrator: &IntegratorConfig,
) -> Result<Propagation> {
    let codec = AugmentedCodec::new(prob.dims().state, false);
    let y0 = codec.pack(&start.x, &start.p, None, None, 0.0);
    let rhs = |_t: f64, y: &DVector<f64>| augmented_rhs(prob, &codec, direction, y);
    propagate(rhs, &y0, (0.0, duration), integrator, |_: &AcceptedStep<'_>| {
        ObserverAction::Continue
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::Method;
    use crate::problems::{double_integrator_problem, glider_problem, proximity_problem, GliderParams};
    use approx::assert_relative_eq;

    fn di_sample(prob: &dyn Problem, nu: &[f64]) -> TerminalSample {
        TerminalSample::new(prob, DVector::zeros(2), DVector::from_row_slice(nu)).unwrap()
    }

    fn tight(output_dt: Option<f64>) -> IntegratorConfig {
        IntegratorConfig::adaptive(1e-10, 1e-12, output_dt)
    }

    #[test]
    fn transversality_is_enforced() {
        let prob = proximity_problem(1.0).unwrap();
        let s = TerminalSample::from_free_coords(&prob, &[0.1, -0.2], DVector::from_row_slice(&[0.5, 0.25]))
            .unwrap();
        assert_eq!(s.x_f, DVector::from_vec(vec![0.0, 0.0, 0.1, -0.2]));
        // p_f = nu . grad phi = (0.5, 0.25, 0, 0).
        assert_eq!(s.p_f, DVector::from_vec(vec![0.5, 0.25, 0.0, 0.0]));

        let off = TerminalSample::new(
            &prob,
            DVector::from_vec(vec![1e-3, 0.0, 0.0, 0.0]),
            DVector::from_row_slice(&[0.0, 0.0]),
        );
        assert!(off.is_err());
    }

    #[test]
    fn backward_rhs_hand_value() {
        // x = (0,0), p = (c, 0): u* = 0 and the backward velocity is (0,0,0,c).
        let prob = double_integrator_problem(1.0).unwrap();
        let c = 7.5;
        let pt = PhasePoint::new(DVector::zeros(2), DVector::from_vec(vec![c, 0.0]));
        let (dx, dp) = backward_rhs(&prob, &pt).unwrap();
        assert_eq!(dx, DVector::zeros(2));
        assert_eq!(dp, DVector::from_vec(vec![0.0, c]));
    }

    #[test]
    fn backward_is_negated_forward() {
        let prob = proximity_problem(1.0).unwrap();
        let pt = PhasePoint::new(
            DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05]),
            DVector::from_vec(vec![0.4, -0.3, 0.2, -0.1]),
        );
        let (bx, bp) = backward_rhs(&prob, &pt).unwrap();
        let (fx, fp) = forward_rhs(&prob, &pt).unwrap();
        assert!((bx + fx).amax() < 1e-15);
        assert!((bp + fp).amax() < 1e-15);
    }

    #[test]
    fn zero_costate_at_equilibrium_is_stationary() {
        let prob = proximity_problem(1.0).unwrap();
        let pt = PhasePoint::new(DVector::zeros(4), DVector::zeros(4));
        let (dx, dp) = backward_rhs(&prob, &pt).unwrap();
        assert_eq!(dx.amax(), 0.0);
        assert_eq!(dp.amax(), 0.0);
    }

    #[test]
    fn full_initial_conditions() {
        let prob = double_integrator_problem(1.0).unwrap();
        let s = di_sample(&prob, &[1.0, 2.0]);
        let (dx0, dp0) = initial_conditions_full(&prob, &s).unwrap();
        assert_eq!(dx0, DMatrix::zeros(2, 2));
        assert_eq!(dp0, DMatrix::identity(2, 2));

        let prox = proximity_problem(1.0).unwrap();
        let sp = TerminalSample::from_free_coords(&prox, &[0.0, 0.0], DVector::zeros(2)).unwrap();
        assert!(initial_conditions_full(&prox, &sp).is_err());
    }

    #[test]
    fn partial_initial_conditions_proximity() {
        let prob = proximity_problem(1.0).unwrap();
        let s = TerminalSample::from_free_coords(&prob, &[0.3, -0.1], DVector::from_row_slice(&[0.7, -0.4]))
            .unwrap();
        let (dx0, dp0) = initial_conditions_partial(&prob, &s).unwrap();
        // Kernel of grad phi = span{e3, e4}; no curvature term.
        let mut want_dx = DMatrix::zeros(4, 4);
        want_dx[(2, 0)] = 1.0;
        want_dx[(3, 1)] = 1.0;
        assert!((dx0 - want_dx).amax() < 1e-14);
        let mut want_dp = DMatrix::zeros(4, 4);
        want_dp[(0, 2)] = 1.0;
        want_dp[(1, 3)] = 1.0;
        assert!((dp0 - want_dp).amax() < 1e-14);
    }

    #[test]
    fn partial_initial_conditions_glider() {
        let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
        let s = TerminalSample::from_free_coords(&prob, &[700.0, -0.3], DVector::from_row_slice(&[0.9, 1.1]))
            .unwrap();
        let (dx0, dp0) = initial_conditions_partial(&prob, &s).unwrap();
        // Kernel basis {e_V, e_gamma}; multiplier columns are grad phi rows.
        let grad = prob.constraint_gradient(&s.x_f);
        assert!((grad * &dx0).amax() < 1e-14);
        assert_eq!(dx0[(0, 0)], 1.0);
        assert_eq!(dx0[(1, 1)], 1.0);
        assert_eq!(dp0[(2, 2)], 1.0);
        assert_eq!(dp0[(3, 3)], 1.0);
        // Stacked rank is n.
        let mut stacked = DMatrix::zeros(8, 4);
        stacked.rows_mut(0, 4).copy_from(&dx0);
        stacked.rows_mut(4, 4).copy_from(&dp0);
        assert_eq!(stacked.rank(1e-12), 4);
    }

    #[test]
    fn variational_closed_form_double_integrator() {
        let prob = double_integrator_problem(1.0).unwrap();
        let s = di_sample(&prob, &[-24.0, 12.0]);
        let cfg = BuildConfig::new(tight(Some(0.125)));
        let states = variational_states(&prob, &s, &cfg).unwrap();
        for (sigma, dx, dp) in &states {
            let sg = *sigma;
            let want_dx = DMatrix::from_row_slice(
                2,
                2,
                &[sg.powi(3) / 12.0, sg * sg / 4.0, -sg * sg / 4.0, -sg / 2.0],
            );
            let want_dp = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, sg, 1.0]);
            assert!((dx - want_dx).amax() < 1e-12, "sigma = {sg}");
            assert!((dp - want_dp).amax() < 1e-12, "sigma = {sg}");
        }
    }

    #[test]
    fn variational_rhs_matches_closed_form_slope() {
        let prob = double_integrator_problem(1.0).unwrap();
        let pt = PhasePoint::new(DVector::zeros(2), DVector::from_vec(vec![-24.0, 12.0]));
        let sg = 0.5f64;
        let dx = DMatrix::from_row_slice(2, 2, &[sg.powi(3) / 12.0, sg * sg / 4.0, -sg * sg / 4.0, -sg / 2.0]);
        let dp = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, sg, 1.0]);
        let (dx_dot, dp_dot) = variational_rhs(&prob, &pt, &dx, &dp).unwrap();
        let want_dx_dot =
            DMatrix::from_row_slice(2, 2, &[sg * sg / 4.0, sg / 2.0, -sg / 2.0, -0.5]);
        let want_dp_dot = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert!((dx_dot - want_dx_dot).amax() < 1e-14);
        assert!((dp_dot - want_dp_dot).amax() < 1e-14);
    }

    #[test]
    fn no_conjugate_time_for_double_integrator() {
        let trace: Vec<(f64, f64)> = (0..=100)
            .map(|i| {
                let s = i as f64 / 100.0;
                (s, s.powi(4) / 48.0)
            })
            .collect();
        let got = detect_conjugate_time(&trace, 1e-3, 1e-9, |s| s.powi(4) / 48.0).unwrap();
        assert_eq!(got, None);
    }

    #[test]
    fn synthetic_zero_is_located() {
        let f = |s: f64| s * s * (1.0 - s);
        let trace: Vec<(f64, f64)> = (0..=24).map(|i| i as f64 * 0.05).map(|s| (s, f(s))).collect();
        let tc = detect_conjugate_time(&trace, 0.05, 1e-9, f).unwrap().unwrap();
        assert_relative_eq!(tc, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn window_past_span_yields_none() {
        let trace = vec![(0.0, 0.0), (0.5, 0.1), (1.0, -0.2)];
        let got = detect_conjugate_time(&trace, 2.0, 1e-9, |_| 0.0).unwrap();
        assert_eq!(got, None);
    }

    #[test]
    fn flat_trace_is_degenerate() {
        let trace: Vec<(f64, f64)> = (0..=50).map(|i| (i as f64 * 0.02, 1e-13)).collect();
        assert!(matches!(
            detect_conjugate_time(&trace, 1e-3, 1e-9, |_| 1e-13),
            Err(Error::DegenerateFamily)
        ));
    }

    #[test]
    fn rank_drop_without_sign_change_is_detected() {
        // Grows, then decays to ~0 and stays there.
        let f = |s: f64| (1.0 - s).max(0.0).powi(6) * s * s;
        let trace: Vec<(f64, f64)> = (0..=60).map(|i| i as f64 * 0.025).map(|s| (s, f(s))).collect();
        let tc = detect_conjugate_time(&trace, 0.05, 1e-4, f).unwrap().unwrap();
        // |f| crosses 1e-4 * max somewhere before s = 1.
        assert!(tc < 1.0 && tc > 0.5, "tc = {tc}");
    }

    #[test]
    fn analytic_extremal_is_reproduced() {
        // Terminal costate (-24, 12) reverses to x = (1, 0), u = -6, cost 12.
        let prob = double_integrator_problem(1.0).unwrap();
        let s = di_sample(&prob, &[-24.0, 12.0]);
        let cfg = BuildConfig::new(tight(Some(0.25)));
        let traj = build_extremal(&prob, &s, &cfg).unwrap();
        assert_eq!(traj.conjugate_time, None);
        assert_relative_eq!(traj.horizon, 1.0, epsilon = 1e-12);
        let last = traj.samples.last().unwrap();
        assert_relative_eq!(last.sigma, 1.0, epsilon = 1e-12);
        assert_relative_eq!(last.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(last.x[1], 0.0, epsilon = 1e-8);
        assert_relative_eq!(last.u[0], -6.0, epsilon = 1e-8);
        assert_relative_eq!(last.cost_to_go, 12.0, epsilon = 1e-8);
        // det trace grows as sigma^4 / 48.
        for &(sg, det) in traj.det_trace.iter().filter(|(sg, _)| *sg >= 0.1) {
            assert_relative_eq!(det, sg.powi(4) / 48.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn zero_extremal_stays_at_equilibrium() {
        let prob = proximity_problem(1.0).unwrap();
        let s = TerminalSample::from_free_coords(&prob, &[0.0, 0.0], DVector::zeros(2)).unwrap();
        let cfg = BuildConfig::new(tight(Some(0.1)));
        let traj = build_extremal(&prob, &s, &cfg).unwrap();
        assert_eq!(traj.conjugate_time, None);
        assert_relative_eq!(traj.horizon, 1.0, epsilon = 1e-12);
        for pt in &traj.samples {
            assert!(pt.x.amax() < 1e-12);
            assert!(pt.u.amax() < 1e-12);
        }
    }

    #[test]
    fn glider_det_trace_starts_at_zero_then_grows() {
        let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
        let s = TerminalSample::from_free_coords(
            &prob,
            &[700.0, -0.25],
            DVector::from_row_slice(&[0.5, 2.0]),
        )
        .unwrap();
        let mut cfg = BuildConfig::new(tight(Some(0.5)));
        cfg.integrator.method = Method::Rk45Adaptive { rel_tol: 1e-9, abs_tol: 1e-9 };
        let traj = build_extremal(&prob, &s, &cfg).unwrap();
        assert_eq!(traj.det_trace[0], (0.0, 0.0));
        let nonzero = traj
            .det_trace
            .iter()
            .find(|(sg, _)| *sg > 0.0)
            .expect("trace has points past sigma = 0");
        assert!(nonzero.1 != 0.0);
    }

    #[test]
    fn perturbed_samples_stay_on_the_manifold() {
        let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
        let s = TerminalSample::from_free_coords(
            &prob,
            &[650.0, -0.2],
            DVector::from_row_slice(&[1.0, -0.5]),
        )
        .unwrap();
        for dir in 0..4 {
            let p = perturbed_terminal_sample(&prob, &s, dir, 1e-6).unwrap();
            assert!(prob.constraint(&p.x_f).amax() < 1e-12);
        }
        // Multiplier directions leave the terminal state alone.
        let p = perturbed_terminal_sample(&prob, &s, 2, 1e-6).unwrap();
        assert_eq!(p.x_f, s.x_f);
        assert_relative_eq!(p.nu[0], 1.0 + 1e-6, max_relative = 1e-12);
    }
}
