//! Planar spacecraft proximity to a target on a circular orbit, in the
//! target's local frame with the orbit radius and gravitational parameter
//! normalized to 1 (orbit period 2*pi).
//!
//! State `(x, y, v_x, v_y)`; control `(u_x, u_y)`; running cost
//! `||u||^2 / 2`. The terminal condition pins the position to the target,
//! leaving the final velocity free.

use crate::error::Error;
use crate::problem::{Dims, Problem};
use crate::Result;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct ProximityProblem {
    t_f: f64,
}

pub fn proximity_problem(t_f: f64) -> Result<ProximityProblem> {
    if !(t_f.is_finite() && t_f > 0.0) {
        return Err(Error::Config("problem.t_f: must be positive".into()));
    }
    Ok(ProximityProblem { t_f })
}

/// Normalized distance to the Earth's center.
fn radius(x: &DVector<f64>) -> f64 {
    ((x[0] + 1.0) * (x[0] + 1.0) + x[1] * x[1]).sqrt()
}

impl Problem for ProximityProblem {
    fn id(&self) -> &str {
        "proximity"
    }

    fn dims(&self) -> Dims {
        Dims { state: 4, control: 2, constraint: 2 }
    }

    fn cost_weight(&self) -> f64 {
        0.5
    }

    fn final_time(&self) -> f64 {
        self.t_f
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let r = radius(x);
        let grav = 1.0 / (r * r * r) - 1.0;
        DVector::from_vec(vec![
            x[2],
            x[3],
            2.0 * x[3] - (1.0 - x[0]) * grav + u[0],
            -2.0 * x[2] - x[1] * grav + u[1],
        ])
    }

    fn dynamics_jacobian(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let r = radius(x);
        let grav = 1.0 / (r * r * r) - 1.0;
        let r5 = r.powi(5);
        // d(1/r^3)/dx = -3(x+1)/r^5, d(1/r^3)/dy = -3y/r^5.
        let mut jac = DMatrix::zeros(4, 4);
        jac[(0, 2)] = 1.0;
        jac[(1, 3)] = 1.0;
        jac[(2, 0)] = grav + 3.0 * (1.0 - x[0]) * (x[0] + 1.0) / r5;
        jac[(2, 1)] = 3.0 * x[1] * (1.0 - x[0]) / r5;
        jac[(2, 3)] = 2.0;
        jac[(3, 0)] = 3.0 * x[1] * (x[0] + 1.0) / r5;
        jac[(3, 1)] = -grav + 3.0 * x[1] * x[1] / r5;
        jac[(3, 2)] = -2.0;
        jac
    }

    fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0], x[1]])
    }

    fn constraint_gradient(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut grad = DMatrix::zeros(2, 4);
        grad[(0, 0)] = 1.0;
        grad[(1, 1)] = 1.0;
        grad
    }

    fn constraint_hessian_contraction(&self, _nu: &DVector<f64>, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(4, 4)
    }

    fn optimal_control(&self, _x: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        // With cost ||u||^2 / 2 the stationary control is the velocity costate.
        Ok(DVector::from_vec(vec![p[2], p[3]]))
    }

    fn terminal_state(&self, free: &[f64]) -> DVector<f64> {
        // Free coordinates on the terminal manifold: (v_xf, v_yf).
        DVector::from_vec(vec![0.0, 0.0, free[0], free[1]])
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::DomainViolation("proximity: non-finite state".into()));
        }
        let r = radius(x);
        if r < 1e-6 {
            return Err(Error::DomainViolation(format!(
                "proximity: r = {r:.3e} at the Earth's center"
            )));
        }
        Ok(())
    }
}
