//! Double-integrator benchmark: `x_dot = v`, `v_dot = u`, cost
//! `integral u^2 dt`, both state components pinned at the final time. Its
//! minimum-effort solution is closed-form, which makes it the reference
//! problem for every oracle in the test suites.

use crate::error::Error;
use crate::problem::{Dims, PhasePoint, Problem, ReducedHessians};
use crate::Result;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct DoubleIntegratorProblem {
    t_f: f64,
}

pub fn double_integrator_problem(t_f: f64) -> Result<DoubleIntegratorProblem> {
    if !(t_f.is_finite() && t_f > 0.0) {
        return Err(Error::Config("problem.t_f: must be positive".into()));
    }
    Ok(DoubleIntegratorProblem { t_f })
}

impl Problem for DoubleIntegratorProblem {
    fn id(&self) -> &str {
        "double_integrator"
    }

    fn dims(&self) -> Dims {
        Dims { state: 2, control: 1, constraint: 2 }
    }

    fn cost_weight(&self) -> f64 {
        1.0
    }

    fn final_time(&self) -> f64 {
        self.t_f
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1], u[0]])
    }

    fn dynamics_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
    }

    fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn constraint_gradient(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }

    fn constraint_hessian_contraction(&self, _nu: &DVector<f64>, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }

    fn optimal_control(&self, _x: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![p[1] / 2.0]))
    }

    fn terminal_state(&self, _free: &[f64]) -> DVector<f64> {
        // s = n: the terminal manifold is the origin.
        DVector::zeros(2)
    }

    fn analytic_hessians(&self, _pt: &PhasePoint) -> Option<ReducedHessians> {
        // h(x, p) = p_x v + p_v^2 / 4.
        Some(ReducedHessians {
            h_xx: DMatrix::zeros(2, 2),
            h_xp: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            h_pp: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.5]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        hamiltonian, maximized_hamiltonian, reduced_second_derivatives, PhasePoint,
    };
    use approx::assert_relative_eq;

    fn prob() -> DoubleIntegratorProblem {
        double_integrator_problem(1.0).unwrap()
    }

    #[test]
    fn hamiltonian_hand_values() {
        let p = prob();
        // Zero costate.
        let pt = PhasePoint::new(DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2));
        assert_eq!(hamiltonian(&p, &pt, &DVector::zeros(1)).unwrap(), 0.0);
        // x = (1,2), p = (3,4), u = 5 -> 3*2 + 4*5 - 25 = 1.
        let pt = PhasePoint::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        );
        let h = hamiltonian(&p, &pt, &DVector::from_vec(vec![5.0])).unwrap();
        assert_relative_eq!(h, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn maximized_hamiltonian_hand_values() {
        let p = prob();
        let pt = PhasePoint::new(DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2));
        assert_eq!(maximized_hamiltonian(&p, &pt).unwrap(), 0.0);
        // x = (1,0), p = (-24,-12): u* = -6, h = (-12)(-6) - 36 = 36.
        let pt = PhasePoint::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![-24.0, -12.0]),
        );
        let u = p.optimal_control(&pt.x, &pt.p).unwrap();
        assert_eq!(u[0], -6.0);
        assert_relative_eq!(maximized_hamiltonian(&p, &pt).unwrap(), 36.0, max_relative = 1e-15);
    }

    #[test]
    fn control_from_costate() {
        let p = prob();
        let u = p
            .optimal_control(&DVector::zeros(2), &DVector::from_vec(vec![0.0, 4.0]))
            .unwrap();
        assert_eq!(u[0], 2.0);
    }

    #[test]
    fn analytic_hessians_match_finite_differences() {
        let p = prob();
        let pt = PhasePoint::new(
            DVector::from_vec(vec![0.7, -1.3]),
            DVector::from_vec(vec![2.0, -5.0]),
        );
        let analytic = reduced_second_derivatives(&p, &pt).unwrap();
        assert_eq!(analytic.h_pp[(1, 1)], 0.5);
        assert_eq!(analytic.h_xx.amax(), 0.0);

        // Cross-check the finite-difference path against the closed form.
        struct NoOverride(DoubleIntegratorProblem);
        impl Problem for NoOverride {
            fn id(&self) -> &str {
                self.0.id()
            }
            fn dims(&self) -> Dims {
                self.0.dims()
            }
            fn cost_weight(&self) -> f64 {
                self.0.cost_weight()
            }
            fn final_time(&self) -> f64 {
                self.0.final_time()
            }
            fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
                self.0.dynamics(x, u)
            }
            fn dynamics_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
                self.0.dynamics_jacobian(x, u)
            }
            fn constraint(&self, x: &DVector<f64>) -> DVector<f64> {
                self.0.constraint(x)
            }
            fn constraint_gradient(&self, x: &DVector<f64>) -> DMatrix<f64> {
                self.0.constraint_gradient(x)
            }
            fn constraint_hessian_contraction(
                &self,
                nu: &DVector<f64>,
                x: &DVector<f64>,
            ) -> DMatrix<f64> {
                self.0.constraint_hessian_contraction(nu, x)
            }
            fn optimal_control(&self, x: &DVector<f64>, p: &DVector<f64>) -> crate::Result<DVector<f64>> {
                self.0.optimal_control(x, p)
            }
            fn terminal_state(&self, free: &[f64]) -> DVector<f64> {
                self.0.terminal_state(free)
            }
        }
        let fd = reduced_second_derivatives(&NoOverride(prob()), &pt).unwrap();
        assert!((&fd.h_xx - &analytic.h_xx).amax() < 1e-9);
        assert!((&fd.h_xp - &analytic.h_xp).amax() < 1e-9);
        assert!((&fd.h_pp - &analytic.h_pp).amax() < 1e-9);
    }
}
