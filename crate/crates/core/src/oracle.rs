//! Verification-only solvers: indirect single shooting (Newton on the
//! initial costate with variational Jacobians) and the closed-form
//! double-integrator feedback law. These stay independent of the backward
//! generator so they can cross-check it.

use crate::error::Error;
use crate::extremal::{augmented_rhs, kernel_basis, AugmentedCodec, Direction};
use crate::ode::{propagate, AcceptedStep, IntegratorConfig, ObserverAction};
use crate::problem::Problem;
use crate::Result;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct ShootOptions {
    pub integrator: IntegratorConfig,
    /// Convergence tolerance on both defects (max norm).
    pub tol: f64,
    pub max_iterations: usize,
}

impl ShootOptions {
    /// Tolerances keyed to the problem's unit system: 1e-9 for normalized
    /// problems, 1e-6 for the SI-unit glider.
    pub fn for_problem(prob: &dyn Problem) -> Self {
        let tol = if prob.id() == "glider" { 1e-6 } else { 1e-9 };
        Self {
            integrator: IntegratorConfig::adaptive(1e-11, 1e-13, None),
            tol,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub converged: bool,
    pub p0: DVector<f64>,
    pub iterations: usize,
    /// `|phi(x(t_f))|_inf`.
    pub terminal_defect: f64,
    /// Max tangential component of the final costate.
    pub transversality_defect: f64,
    /// Forward grid samples `(t, x, p, u)` of the converged solution.
    pub trajectory: Vec<(f64, DVector<f64>, DVector<f64>, DVector<f64>)>,
    /// Accumulated running cost of the converged solution.
    pub cost: f64,
}

struct ResidualEval {
    residual: DVector<f64>,
    terminal_defect: f64,
    transversality_defect: f64,
    jacobian: Option<DMatrix<f64>>,
}

/// Terminal residual `[phi(x_T); K^T p_T]` where `K` spans `ker grad phi`:
/// the boundary condition plus the transversality condition with the
/// multipliers eliminated by projection.
fn eval_residual(
    prob: &dyn Problem,
    x_t: &DVector<f64>,
    p_t: &DVector<f64>,
    sensitivities: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<ResidualEval> {
    let dims = prob.dims();
    let (n, s) = (dims.state, dims.constraint);
    let phi = prob.constraint(x_t);
    let grad = prob.constraint_gradient(x_t);
    let kernel = if s < n { Some(kernel_basis(prob, x_t)?) } else { None };

    let mut residual = DVector::zeros(n);
    residual.rows_mut(0, s).copy_from(&phi);
    let mut transversality_defect = 0.0;
    if let Some(k) = &kernel {
        let tang = k.transpose() * p_t;
        residual.rows_mut(s, n - s).copy_from(&tang);
        transversality_defect = tang.amax();
    }

    // The kernel/gradient derivative terms are dropped; exact for linear
    // terminal constraints, a Gauss-Newton approximation otherwise.
    let jacobian = sensitivities.map(|(dx, dp)| {
        let mut jac = DMatrix::zeros(n, n);
        jac.rows_mut(0, s).copy_from(&(&grad * dx));
        if let Some(k) = &kernel {
            jac.rows_mut(s, n - s).copy_from(&(k.transpose() * dp));
        }
        jac
    });

    Ok(ResidualEval {
        residual,
        terminal_defect: phi.amax(),
        transversality_defect,
        jacobian,
    })
}

struct ForwardEnd {
    x: DVector<f64>,
    p: DVector<f64>,
    dx: Option<DMatrix<f64>>,
    dp: Option<DMatrix<f64>>,
}

fn propagate_forward(
    prob: &dyn Problem,
    x_c: &DVector<f64>,
    p0: &DVector<f64>,
    t_g: f64,
    integrator: &IntegratorConfig,
    variational: bool,
) -> Result<ForwardEnd> {
    let n = prob.dims().state;
    let codec = AugmentedCodec::new(n, variational);
    let y0 = if variational {
        let dx0 = DMatrix::zeros(n, n);
        let dp0 = DMatrix::identity(n, n);
        codec.pack(x_c, p0, Some(&dx0), Some(&dp0), 0.0)
    } else {
        codec.pack(x_c, p0, None, None, 0.0)
    };
    let mut cfg = *integrator;
    cfg.output_dt = None;
    let run = propagate(
        |_t, y| augmented_rhs(prob, &codec, Direction::Forward, y),
        &y0,
        (0.0, t_g),
        &cfg,
        |_: &AcceptedStep<'_>| ObserverAction::Continue,
    )?;
    Ok(ForwardEnd {
        x: codec.state(&run.end_y),
        p: codec.costate(&run.end_y),
        dx: variational.then(|| codec.dx(&run.end_y)),
        dp: variational.then(|| codec.dp(&run.end_y)),
    })
}

/// Newton iteration on the initial costate so the forward trajectory meets
/// the terminal manifold and the transversality condition. Non-convergence
/// is reported in the result, not as an error.
pub fn shoot(
    prob: &dyn Problem,
    x_c: &DVector<f64>,
    t_g: f64,
    p0_guess: &DVector<f64>,
    opts: &ShootOptions,
) -> Result<ShootingResult> {
    let n = prob.dims().state;
    if x_c.len() != n || p0_guess.len() != n {
        return Err(Error::ContractViolation("shoot: dimension mismatch".into()));
    }
    if !p0_guess.iter().all(|v| v.is_finite()) {
        return Err(Error::ContractViolation("shoot: non-finite guess".into()));
    }
    let mut result = ShootingResult {
        converged: false,
        p0: p0_guess.clone(),
        iterations: 0,
        terminal_defect: f64::INFINITY,
        transversality_defect: f64::INFINITY,
        trajectory: Vec::new(),
        cost: f64::NAN,
    };

    if t_g <= 0.0 {
        // Degenerate horizon: report the defects of the point itself.
        if let Ok(eval) = eval_residual(prob, x_c, p0_guess, None) {
            result.terminal_defect = eval.terminal_defect;
            result.transversality_defect = eval.transversality_defect;
            result.converged = eval.terminal_defect < opts.tol
                && eval.transversality_defect < opts.tol;
        }
        return Ok(result);
    }

    let mut p0 = p0_guess.clone();
    for iter in 0..opts.max_iterations {
        result.iterations = iter;
        let end = match propagate_forward(prob, x_c, &p0, t_g, &opts.integrator, true) {
            Ok(end) => end,
            Err(_) => return Ok(result), // diverged off the domain: report failure
        };
        let eval = match eval_residual(
            prob,
            &end.x,
            &end.p,
            Some((end.dx.as_ref().unwrap(), end.dp.as_ref().unwrap())),
        ) {
            Ok(e) => e,
            Err(_) => return Ok(result),
        };
        result.p0 = p0.clone();
        result.terminal_defect = eval.terminal_defect;
        result.transversality_defect = eval.transversality_defect;

        if eval.terminal_defect < opts.tol && eval.transversality_defect < opts.tol {
            result.converged = true;
            break;
        }

        let jac = eval.jacobian.unwrap();
        let Some(delta) = jac.lu().solve(&(-&eval.residual)) else {
            return Ok(result); // singular Jacobian
        };
        if !delta.iter().all(|v| v.is_finite()) {
            return Ok(result);
        }

        // Halving line search on the residual norm.
        let r_norm = eval.residual.norm();
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = &p0 + &delta * alpha;
            if let Ok(end) = propagate_forward(prob, x_c, &trial, t_g, &opts.integrator, false) {
                if let Ok(trial_eval) = eval_residual(prob, &end.x, &end.p, None) {
                    if trial_eval.residual.norm() < (1.0 - 1e-4 * alpha) * r_norm {
                        p0 = trial;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(result); // stalled: non-convergence, by design not retried
        }
    }

    if result.converged {
        let codec = AugmentedCodec::new(n, false);
        let y0 = codec.pack(x_c, &result.p0, None, None, 0.0);
        let mut cfg = opts.integrator;
        if cfg.output_dt.is_none() {
            cfg.output_dt = Some(t_g / 64.0);
        }
        let run = propagate(
            |_t, y| augmented_rhs(prob, &codec, Direction::Forward, y),
            &y0,
            (0.0, t_g),
            &cfg,
            |_: &AcceptedStep<'_>| ObserverAction::Continue,
        )?;
        result.cost = codec.cost(&run.end_y);
        result.trajectory = run
            .samples
            .iter()
            .map(|s| {
                let x = codec.state(&s.y);
                let p = codec.costate(&s.y);
                let u = prob.optimal_control(&x, &p)?;
                Ok((s.t, x, p, u))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(result)
}

/// Minimum-effort feedback for the double integrator: the instantaneous
/// control `u(0) = -6 x / t_g^2 - 4 v / t_g` of the two-point solution that
/// reaches the origin at rest in time `t_g`.
pub fn double_integrator_law(x_c: &DVector<f64>, t_g: f64) -> Result<DVector<f64>> {
    if !(t_g > 0.0) {
        return Err(Error::ContractViolation("double_integrator_law: t_g must be positive".into()));
    }
    let (x, v) = (x_c[0], x_c[1]);
    Ok(DVector::from_vec(vec![-6.0 * x / (t_g * t_g) - 4.0 * v / t_g]))
}
