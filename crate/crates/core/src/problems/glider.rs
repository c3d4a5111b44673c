//! Planar gliding vehicle steered by normal acceleration.
//!
//! State `(V, gamma, x, h)`: speed, flight-path angle, downrange, altitude,
//! in SI units. The drag polar is `D = k1 V^2 + k2 a^2 / V^2` with
//! `k1 = rho S C_D0 / 2` and `k2 = 2 k_m m^2 / (rho S)`. The vehicle flies
//! to the origin with free final speed and flight-path angle, minimizing
//! `integral a^2 dt`.

use crate::error::Error;
use crate::problem::{Dims, Problem};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Vehicle and atmosphere constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GliderParams {
    pub mass: f64,
    pub gravity: f64,
    pub ref_area: f64,
    pub cd0: f64,
    pub km: f64,
    /// Air density; not part of the published constants, defaults to the
    /// sea-level standard and may be overridden in configs.
    pub rho: f64,
}

impl Default for GliderParams {
    fn default() -> Self {
        Self {
            mass: 100.0,
            gravity: 9.8,
            ref_area: 0.0324,
            cd0: 0.2,
            km: 0.1,
            rho: 1.225,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GliderProblem {
    params: GliderParams,
    k1: f64,
    k2: f64,
    t_f: f64,
}

pub fn glider_problem(params: GliderParams, t_f: f64) -> Result<GliderProblem> {
    let all = [
        params.mass,
        params.gravity,
        params.ref_area,
        params.cd0,
        params.km,
        params.rho,
    ];
    if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::Config("problem: glider parameters must be positive".into()));
    }
    if !(t_f.is_finite() && t_f > 0.0) {
        return Err(Error::Config("problem.t_f: must be positive".into()));
    }
    let k1 = 0.5 * params.rho * params.ref_area * params.cd0;
    let k2 = 2.0 * params.km * params.mass * params.mass / (params.rho * params.ref_area);
    Ok(GliderProblem { params, k1, k2, t_f })
}

impl GliderProblem {
    pub fn params(&self) -> &GliderParams {
        &self.params
    }

    pub fn drag_coefficients(&self) -> (f64, f64) {
        (self.k1, self.k2)
    }
}

impl Problem for GliderProblem {
    fn id(&self) -> &str {
        "glider"
    }

    fn dims(&self) -> Dims {
        Dims { state: 4, control: 1, constraint: 2 }
    }

    fn cost_weight(&self) -> f64 {
        1.0
    }

    fn final_time(&self) -> f64 {
        self.t_f
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (v, gamma) = (x[0], x[1]);
        let a = u[0];
        let m = self.params.mass;
        let g = self.params.gravity;
        let drag = self.k1 * v * v + self.k2 * a * a / (v * v);
        DVector::from_vec(vec![
            -drag / m - g * gamma.sin(),
            (a - g * gamma.cos()) / v,
            v * gamma.cos(),
            v * gamma.sin(),
        ])
    }

    fn dynamics_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (v, gamma) = (x[0], x[1]);
        let a = u[0];
        let m = self.params.mass;
        let g = self.params.gravity;
        let (sin_g, cos_g) = gamma.sin_cos();
        let mut jac = DMatrix::zeros(4, 4);
        jac[(0, 0)] = -(2.0 * self.k1 * v - 2.0 * self.k2 * a * a / (v * v * v)) / m;
        jac[(0, 1)] = -g * cos_g;
        jac[(1, 0)] = -(a - g * cos_g) / (v * v);
        jac[(1, 1)] = g * sin_g / v;
        jac[(2, 0)] = cos_g;
        jac[(2, 1)] = -v * sin_g;
        jac[(3, 0)] = sin_g;
        jac[(3, 1)] = v * cos_g;
        jac
    }

    fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[2], x[3]])
    }

    fn constraint_gradient(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut grad = DMatrix::zeros(2, 4);
        grad[(0, 2)] = 1.0;
        grad[(1, 3)] = 1.0;
        grad
    }

    fn constraint_hessian_contraction(&self, _nu: &DVector<f64>, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(4, 4)
    }

    fn optimal_control(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        let v = x[0];
        let (p_v, p_gamma) = (p[0], p[1]);
        let m = self.params.mass;
        let denom = m * v * v + self.k2 * p_v;
        if denom <= 0.0 {
            return Err(Error::SingularControl(format!(
                "glider: m V^2 + k2 p_V = {denom:.3e} <= 0 (Legendre condition fails)"
            )));
        }
        Ok(DVector::from_vec(vec![p_gamma * m * v / (2.0 * denom)]))
    }

    fn terminal_state(&self, free: &[f64]) -> DVector<f64> {
        // Free coordinates on the terminal manifold: (V_f, gamma_f).
        DVector::from_vec(vec![free[0], free[1], 0.0, 0.0])
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::DomainViolation("glider: non-finite state".into()));
        }
        if x[0] <= 0.0 {
            return Err(Error::DomainViolation(format!("glider: V = {:.3e} <= 0", x[0])));
        }
        if x[1].abs() > FRAC_PI_2 + 1e-9 {
            return Err(Error::DomainViolation(format!(
                "glider: |gamma| = {:.4} > pi/2",
                x[1].abs()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{control_hessian, hamiltonian, PhasePoint};
    use approx::assert_relative_eq;

    fn prob() -> GliderProblem {
        glider_problem(GliderParams::default(), 20.0).unwrap()
    }

    #[test]
    fn drag_constants_from_parameters() {
        let p = prob();
        let (k1, k2) = p.drag_coefficients();
        assert_relative_eq!(k1, 0.5 * 1.225 * 0.0324 * 0.2, max_relative = 1e-15);
        assert_relative_eq!(k2, 2.0 * 0.1 * 100.0 * 100.0 / (1.225 * 0.0324), max_relative = 1e-15);
    }

    #[test]
    fn level_flight_read_off() {
        // At gamma = 0: h_dot = 0 and gamma_dot = (a - g)/V exactly.
        let p = prob();
        let x = DVector::from_vec(vec![900.0, 0.0, -5000.0, 2000.0]);
        let u = DVector::from_vec(vec![9.8]);
        let f = p.dynamics(&x, &u);
        assert_eq!(f[3], 0.0);
        assert_relative_eq!(f[1], (9.8 - 9.8) / 900.0, epsilon = 1e-18);
        let u2 = DVector::from_vec(vec![25.0]);
        let f2 = p.dynamics(&x, &u2);
        assert_relative_eq!(f2[1], (25.0 - 9.8) / 900.0, max_relative = 1e-15);
    }

    #[test]
    fn stationarity_formula() {
        let p = prob();
        // p_gamma = 0 -> a* = 0.
        let x = DVector::from_vec(vec![1200.0, 0.3, -10_000.0, 4000.0]);
        let pvec = DVector::from_vec(vec![5.0, 0.0, 1.0, -2.0]);
        let a = p.optimal_control(&x, &pvec).unwrap();
        assert_eq!(a[0], 0.0);

        // Hand evaluation: V = 1500, p_V = 0, p_gamma = 2, m = 100.
        let x = DVector::from_vec(vec![1500.0, 0.0, 0.0, 0.0]);
        let pvec = DVector::from_vec(vec![0.0, 2.0, 0.0, 0.0]);
        let a = p.optimal_control(&x, &pvec).unwrap();
        assert_relative_eq!(a[0], 1.0 / 1500.0, max_relative = 1e-14);

        // Legendre check at that point: d2H/da2 = -2.
        let pt = PhasePoint::new(x, pvec);
        let u = p.optimal_control(&pt.x, &pt.p).unwrap();
        let hess = control_hessian(&p, &pt, &u).unwrap();
        assert_relative_eq!(hess[(0, 0)], -2.0, max_relative = 1e-7);
    }

    #[test]
    fn singular_denominator_rejected() {
        let p = prob();
        let x = DVector::from_vec(vec![10.0, 0.0, 0.0, 0.0]);
        // m V^2 = 1e4; k2 ~ 5.04e4, so p_V = -1 tips the denominator negative.
        let pvec = DVector::from_vec(vec![-1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            p.optimal_control(&x, &pvec),
            Err(Error::SingularControl(_))
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = prob();
        let x = DVector::from_vec(vec![1100.0, -0.2, -12_000.0, 3000.0]);
        let u = DVector::from_vec(vec![30.0]);
        let jac = p.dynamics_jacobian(&x, &u);
        for j in 0..4 {
            let step = 1e-6 * x[j].abs().max(1.0);
            let mut hi = x.clone();
            hi[j] += step;
            let mut lo = x.clone();
            lo[j] -= step;
            let col = (p.dynamics(&hi, &u) - p.dynamics(&lo, &u)) / (2.0 * step);
            for i in 0..4 {
                assert_relative_eq!(jac[(i, j)], col[i], epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn domain_rejects_nonpositive_speed() {
        let p = prob();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0]);
        assert!(p.check_state(&x).is_err());
        let pt = PhasePoint::new(x, DVector::zeros(4));
        assert!(hamiltonian(&p, &pt, &DVector::zeros(1)).is_err());
    }
}
