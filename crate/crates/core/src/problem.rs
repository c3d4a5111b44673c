//! Abstract minimum-effort control problem: smooth dynamics, a terminal
//! manifold `phi(x) = 0`, a quadratic running cost `w * ||u||^2`, and the
//! Hamiltonian machinery built on top of them.
//!
//! The Hamiltonian is `H(x, p, u) = p . f(x, u) - w * ||u||^2` with the
//! costate `p` treated as a row vector in the formulas and stored as a
//! column vector here. Every concrete problem supplies its maximizing
//! control `u*(x, p)` in closed form, so the reduced Hamiltonian
//! `h(x, p) = H(x, p, u*(x, p))` is a plain smooth function of the phase
//! point. Its first derivatives are analytic (the control derivative drops
//! out at the stationary point); second derivatives come from central
//! differences of those first derivatives unless a problem overrides them.

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Problem dimensions: state `n`, control `m`, terminal constraint `s <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
    pub constraint: usize,
}

/// A point of the phase space: state and costate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(x: DVector<f64>, p: DVector<f64>) -> Self {
        Self { x, p }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

/// Second derivatives of the reduced Hamiltonian `h(x, p)`.
///
/// `h_xp[(i, j)] = d2h / dx_i dp_j`; the `px` block is its transpose.
#[derive(Debug, Clone)]
pub struct ReducedHessians {
    pub h_xx: DMatrix<f64>,
    pub h_xp: DMatrix<f64>,
    pub h_pp: DMatrix<f64>,
}

impl ReducedHessians {
    pub fn h_px(&self) -> DMatrix<f64> {
        self.h_xp.transpose()
    }
}

/// Contract every concrete minimum-effort problem satisfies.
///
/// Implementations must be immutable after construction; all methods are
/// pure functions of their inputs, so a problem can be shared freely across
/// worker threads.
pub trait Problem: Send + Sync {
    /// Stable identifier used in dataset metadata and configs.
    fn id(&self) -> &str;

    fn dims(&self) -> Dims;

    /// Weight `w` of the running cost `w * ||u||^2`.
    fn cost_weight(&self) -> f64;

    /// Fixed final time (flight duration), in the problem's time unit.
    fn final_time(&self) -> f64;

    /// State dynamics `f(x, u)`.
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `n x n` Jacobian of the dynamics with respect to the state, at fixed
    /// control.
    fn dynamics_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    /// Terminal constraint `phi: R^n -> R^s`.
    fn constraint(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `s x n` gradient of the terminal constraint.
    fn constraint_gradient(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Contraction `nu . grad^2 phi(x)` as an `n x n` matrix, i.e.
    /// `sum_k nu_k * Hessian(phi_k)(x)`.
    fn constraint_hessian_contraction(&self, nu: &DVector<f64>, x: &DVector<f64>)
        -> DMatrix<f64>;

    /// Closed-form maximizer of the Hamiltonian over the control.
    fn optimal_control(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>>;

    /// Chart on the terminal manifold: the `n - s` free coordinates to a
    /// state with `phi(x) = 0`. The coordinate order fixes the column order
    /// of the `q`-parameterization.
    fn terminal_state(&self, free: &[f64]) -> DVector<f64>;

    /// Rejects states outside the admissible domain.
    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DomainViolation(format!("non-finite state for {}", self.id())))
        }
    }

    /// Analytic second derivatives of the reduced Hamiltonian, if the
    /// problem supplies them. `None` falls back to finite differences.
    fn analytic_hessians(&self, _pt: &PhasePoint) -> Option<ReducedHessians> {
        None
    }
}

fn check_point(prob: &dyn Problem, pt: &PhasePoint) -> Result<()> {
    if !pt.is_finite() {
        return Err(Error::ContractViolation("non-finite phase point".into()));
    }
    prob.check_state(&pt.x)
}

/// Hamiltonian `H(x, p, u) = p . f(x, u) - w * ||u||^2`.
pub fn hamiltonian(prob: &dyn Problem, pt: &PhasePoint, u: &DVector<f64>) -> Result<f64> {
    check_point(prob, pt)?;
    if !u.iter().all(|v| v.is_finite()) {
        return Err(Error::ContractViolation("non-finite control".into()));
    }
    let f = prob.dynamics(&pt.x, u);
    Ok(pt.p.dot(&f) - prob.cost_weight() * u.norm_squared())
}

/// Reduced Hamiltonian `h(x, p) = H(x, p, u*(x, p))`.
pub fn maximized_hamiltonian(prob: &dyn Problem, pt: &PhasePoint) -> Result<f64> {
    check_point(prob, pt)?;
    let u = prob.optimal_control(&pt.x, &pt.p)?;
    let f = prob.dynamics(&pt.x, &u);
    Ok(pt.p.dot(&f) - prob.cost_weight() * u.norm_squared())
}

/// First derivatives `(dh/dx, dh/dp)` of the reduced Hamiltonian.
///
/// At the stationary control the chain-rule term through `u*` vanishes, so
/// `dh/dx = (df/dx)^T p` and `dh/dp = f(x, u*)` are exact.
pub fn reduced_gradients(prob: &dyn Problem, pt: &PhasePoint) -> Result<(DVector<f64>, DVector<f64>)> {
    prob.check_state(&pt.x)?;
    let u = prob.optimal_control(&pt.x, &pt.p)?;
    let f = prob.dynamics(&pt.x, &u);
    let jac = prob.dynamics_jacobian(&pt.x, &u);
    Ok((jac.transpose() * &pt.p, f))
}

/// Central-difference step for second derivatives: `1e-5 * max(1, |v|)`.
fn fd_step(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

/// Second derivatives of the reduced Hamiltonian at a phase point.
///
/// Uses the problem's analytic formulas when available, otherwise central
/// finite differences of the analytic first derivatives. `h_xx` and `h_pp`
/// are symmetrized; `h_xp` is taken from the costate perturbations.
pub fn reduced_second_derivatives(prob: &dyn Problem, pt: &PhasePoint) -> Result<ReducedHessians> {
    if let Some(h) = prob.analytic_hessians(pt) {
        return Ok(h);
    }
    let n = prob.dims().state;
    let mut h_xx = DMatrix::zeros(n, n);
    let mut h_xp = DMatrix::zeros(n, n);
    let mut h_pp = DMatrix::zeros(n, n);

    for j in 0..n {
        // Perturb x_j: columns of h_xx.
        let step = fd_step(pt.x[j]);
        let mut hi = pt.clone();
        hi.x[j] += step;
        let mut lo = pt.clone();
        lo.x[j] -= step;
        let (gx_hi, _) = reduced_gradients(prob, &hi)?;
        let (gx_lo, _) = reduced_gradients(prob, &lo)?;
        h_xx.set_column(j, &((gx_hi - gx_lo) / (2.0 * step)));

        // Perturb p_j: columns of h_xp and h_pp.
        let step = fd_step(pt.p[j]);
        let mut hi = pt.clone();
        hi.p[j] += step;
        let mut lo = pt.clone();
        lo.p[j] -= step;
        let (gx_hi, gp_hi) = reduced_gradients(prob, &hi)?;
        let (gx_lo, gp_lo) = reduced_gradients(prob, &lo)?;
        h_xp.set_column(j, &((gx_hi - gx_lo) / (2.0 * step)));
        h_pp.set_column(j, &((gp_hi - gp_lo) / (2.0 * step)));
    }

    let h_xx = (&h_xx + h_xx.transpose()) * 0.5;
    let h_pp = (&h_pp + h_pp.transpose()) * 0.5;
    Ok(ReducedHessians { h_xx, h_xp, h_pp })
}

/// `m x m` matrix `d2H/du2` by central second differences of `H`.
///
/// Every shipped problem has a Hamiltonian that is exactly quadratic in the
/// control, so the wide step only suppresses roundoff.
pub fn control_hessian(prob: &dyn Problem, pt: &PhasePoint, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = prob.dims().control;
    let mut out = DMatrix::zeros(m, m);
    let h0 = hamiltonian(prob, pt, u)?;
    let step = |i: usize| 1e-2 * u[i].abs().max(1.0);
    for i in 0..m {
        let hi_ = step(i);
        for j in 0..m {
            let hj = step(j);
            let val = if i == j {
                let mut up = u.clone();
                up[i] += hi_;
                let mut dn = u.clone();
                dn[i] -= hi_;
                (hamiltonian(prob, pt, &up)? - 2.0 * h0 + hamiltonian(prob, pt, &dn)?)
                    / (hi_ * hi_)
            } else {
                let mut pp = u.clone();
                pp[i] += hi_;
                pp[j] += hj;
                let mut pm = u.clone();
                pm[i] += hi_;
                pm[j] -= hj;
                let mut mp = u.clone();
                mp[i] -= hi_;
                mp[j] += hj;
                let mut mm = u.clone();
                mm[i] -= hi_;
                mm[j] -= hj;
                (hamiltonian(prob, pt, &pp)? - hamiltonian(prob, pt, &pm)?
                    - hamiltonian(prob, pt, &mp)?
                    + hamiltonian(prob, pt, &mm)?)
                    / (4.0 * hi_ * hj)
            };
            out[(i, j)] = val;
        }
    }
    Ok(out)
}

/// True when `d2H/du2` at `(pt, u*(pt))` is negative definite (strengthened
/// Legendre condition).
pub fn legendre_holds(prob: &dyn Problem, pt: &PhasePoint) -> Result<bool> {
    let u = prob.optimal_control(&pt.x, &pt.p)?;
    let hess = control_hessian(prob, pt, &u)?;
    let sym = (&hess + hess.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    Ok(eig.iter().all(|&l| l < -1e-9))
}

/// Max-norm of `dH/du` at the stationary control, by central differences of
/// `H` over the control. Diagnostic used by generation checks and tests.
pub fn stationarity_residual(prob: &dyn Problem, pt: &PhasePoint) -> Result<f64> {
    let u = prob.optimal_control(&pt.x, &pt.p)?;
    let m = u.len();
    let mut worst = 0.0f64;
    for i in 0..m {
        let step = 1e-2 * u[i].abs().max(1.0);
        let mut up = u.clone();
        up[i] += step;
        let mut dn = u.clone();
        dn[i] -= step;
        let d = (hamiltonian(prob, pt, &up)? - hamiltonian(prob, pt, &dn)?) / (2.0 * step);
        worst = worst.max(d.abs());
    }
    Ok(worst)
}
