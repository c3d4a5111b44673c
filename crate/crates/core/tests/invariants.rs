//! Cross-module invariants quantified over many random phase points, plus
//! property tests for the serialization surfaces.

use mecp::dataset::{Dataset, DatasetMeta, DatasetRecord};
use mecp::problem::{
    control_hessian, hamiltonian, maximized_hamiltonian, reduced_second_derivatives, PhasePoint,
    Problem,
};
use mecp::problems::{
    double_integrator_problem, glider_problem, proximity_problem, GliderParams,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn problems() -> Vec<Box<dyn Problem>> {
    vec![
        Box::new(double_integrator_problem(1.0).unwrap()),
        Box::new(proximity_problem(1.0).unwrap()),
        Box::new(glider_problem(GliderParams::default(), 20.0).unwrap()),
    ]
}

/// Random in-domain phase point with costates kept at moderate magnitude.
fn random_point(prob: &dyn Problem, rng: &mut ChaCha20Rng) -> PhasePoint {
    let n = prob.dims().state;
    let x = match prob.id() {
        "glider" => DVector::from_vec(vec![
            rng.gen_range(300.0..1600.0),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-25_000.0..0.0),
            rng.gen_range(-1000.0..8000.0),
        ]),
        "proximity" => DVector::from_fn(4, |_, _| rng.gen_range(-0.4..0.4)),
        _ => DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
    };
    let p = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    PhasePoint::new(x, p)
}

#[test]
fn stationarity_residual_over_random_points() {
    for prob in problems() {
        let mut rng = ChaCha20Rng::seed_from_u64(101);
        let mut worst = 0.0f64;
        let mut checked = 0;
        while checked < 1000 {
            let pt = random_point(prob.as_ref(), &mut rng);
            match mecp::problem::stationarity_residual(prob.as_ref(), &pt) {
                Ok(r) => {
                    worst = worst.max(r);
                    checked += 1;
                }
                Err(_) => continue, // singular control point: outside contract
            }
        }
        assert!(worst < 1e-10, "{}: stationarity residual {worst:.3e}", prob.id());
    }
}

#[test]
fn stationary_control_is_a_local_maximum() {
    for prob in problems() {
        let m = prob.dims().control;
        let mut rng = ChaCha20Rng::seed_from_u64(202);
        let mut checked = 0;
        while checked < 100 {
            let pt = random_point(prob.as_ref(), &mut rng);
            let Ok(u_star) = prob.optimal_control(&pt.x, &pt.p) else { continue };
            let h_star = hamiltonian(prob.as_ref(), &pt, &u_star).unwrap();
            for _ in 0..100 {
                let delta = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)).normalize()
                    * rng.gen_range(0.0..1e-2);
                let h = hamiltonian(prob.as_ref(), &pt, &(&u_star + delta)).unwrap();
                assert!(
                    h <= h_star + 1e-12 * h_star.abs().max(1.0),
                    "{}: perturbed Hamiltonian rose above the maximum",
                    prob.id()
                );
            }
            checked += 1;
        }
    }
}

#[test]
fn legendre_matrix_is_negative_definite_on_samples() {
    for prob in problems() {
        let mut rng = ChaCha20Rng::seed_from_u64(303);
        let mut checked = 0;
        while checked < 50 {
            let pt = random_point(prob.as_ref(), &mut rng);
            let Ok(u) = prob.optimal_control(&pt.x, &pt.p) else { continue };
            let hess = control_hessian(prob.as_ref(), &pt, &u).unwrap();
            let sym = (&hess + hess.transpose()) * 0.5;
            assert!(
                sym.symmetric_eigenvalues().iter().all(|&l| l < 0.0),
                "{}: Legendre condition failed",
                prob.id()
            );
            checked += 1;
        }
    }
}

/// Second-order central difference of the reduced Hamiltonian itself; the
/// independent route the implementation's first-derivative differencing is
/// checked against.
fn hessian_by_double_differencing(prob: &dyn Problem, pt: &PhasePoint) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = prob.dims().state;
    let h = |q: &PhasePoint| maximized_hamiltonian(prob, q).unwrap();
    let step_x: Vec<f64> = (0..n).map(|i| 1e-3 * pt.x[i].abs().max(1.0)).collect();
    let step_p: Vec<f64> = (0..n).map(|i| 1e-3 * pt.p[i].abs().max(1.0)).collect();
    let h0 = h(pt);

    let shift = |dx: Option<(usize, f64)>, dp: Option<(usize, f64)>| {
        let mut q = pt.clone();
        if let Some((i, s)) = dx {
            q.x[i] += s;
        }
        if let Some((j, s)) = dp {
            q.p[j] += s;
        }
        q
    };

    let mut h_xx = DMatrix::zeros(n, n);
    let mut h_xp = DMatrix::zeros(n, n);
    let mut h_pp = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h_xx[(i, j)] = if i == j {
                (h(&shift(Some((i, step_x[i])), None)) - 2.0 * h0
                    + h(&shift(Some((i, -step_x[i])), None)))
                    / (step_x[i] * step_x[i])
            } else {
                (h(&shift(Some((i, step_x[i])), None).clone_with_x(j, step_x[j]))
                    - h(&shift(Some((i, step_x[i])), None).clone_with_x(j, -step_x[j]))
                    - h(&shift(Some((i, -step_x[i])), None).clone_with_x(j, step_x[j]))
                    + h(&shift(Some((i, -step_x[i])), None).clone_with_x(j, -step_x[j])))
                    / (4.0 * step_x[i] * step_x[j])
            };
            h_pp[(i, j)] = if i == j {
                (h(&shift(None, Some((i, step_p[i])))) - 2.0 * h0
                    + h(&shift(None, Some((i, -step_p[i])))))
                    / (step_p[i] * step_p[i])
            } else {
                (h(&shift(None, Some((i, step_p[i]))).clone_with_p(j, step_p[j]))
                    - h(&shift(None, Some((i, step_p[i]))).clone_with_p(j, -step_p[j]))
                    - h(&shift(None, Some((i, -step_p[i]))).clone_with_p(j, step_p[j]))
                    + h(&shift(None, Some((i, -step_p[i]))).clone_with_p(j, -step_p[j])))
                    / (4.0 * step_p[i] * step_p[j])
            };
            h_xp[(i, j)] = (h(&shift(Some((i, step_x[i])), Some((j, step_p[j]))))
                - h(&shift(Some((i, step_x[i])), Some((j, -step_p[j]))))
                - h(&shift(Some((i, -step_x[i])), Some((j, step_p[j]))))
                + h(&shift(Some((i, -step_x[i])), Some((j, -step_p[j])))))
                / (4.0 * step_x[i] * step_p[j]);
        }
    }
    (h_xx, h_xp, h_pp)
}

trait CloneWith {
    fn clone_with_x(&self, i: usize, delta: f64) -> PhasePoint;
    fn clone_with_p(&self, i: usize, delta: f64) -> PhasePoint;
}

impl CloneWith for PhasePoint {
    fn clone_with_x(&self, i: usize, delta: f64) -> PhasePoint {
        let mut q = self.clone();
        q.x[i] += delta;
        q
    }
    fn clone_with_p(&self, i: usize, delta: f64) -> PhasePoint {
        let mut q = self.clone();
        q.p[i] += delta;
        q
    }
}

#[test]
fn second_derivatives_match_double_differencing() {
    for prob in problems() {
        let mut rng = ChaCha20Rng::seed_from_u64(404);
        let mut checked = 0;
        while checked < 10 {
            let pt = random_point(prob.as_ref(), &mut rng);
            let Ok(got) = reduced_second_derivatives(prob.as_ref(), &pt) else { continue };
            let (h_xx, h_xp, h_pp) = hessian_by_double_differencing(prob.as_ref(), &pt);
            for (name, a, b) in [
                ("h_xx", &got.h_xx, &h_xx),
                ("h_xp", &got.h_xp, &h_xp),
                ("h_pp", &got.h_pp, &h_pp),
            ] {
                let scale = b.amax().max(1e-12);
                let err = (a - b).amax() / scale;
                assert!(err < 1e-4, "{}: {name} mismatch {err:.3e}", prob.id());
            }
            checked += 1;
        }
    }
}

#[test]
fn mixed_partials_are_symmetric() {
    // H_xp must equal the transpose of the independently differenced H_px.
    for prob in problems() {
        let mut rng = ChaCha20Rng::seed_from_u64(505);
        let mut checked = 0;
        while checked < 10 {
            let pt = random_point(prob.as_ref(), &mut rng);
            let Ok(got) = reduced_second_derivatives(prob.as_ref(), &pt) else { continue };
            let (_, h_xp, _) = hessian_by_double_differencing(prob.as_ref(), &pt);
            let scale = h_xp.amax().max(1.0);
            assert!(
                (&got.h_xp - &h_xp).amax() / scale < 1e-4,
                "{}: h_xp disagrees with the symmetric route",
                prob.id()
            );
            checked += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The stationary control beats random nearby controls for any phase
    /// point of the normalized problems.
    #[test]
    fn prop_maximized_hamiltonian_dominates(
        x in prop::collection::vec(-0.5f64..0.5, 4),
        p in prop::collection::vec(-1.0f64..1.0, 4),
        du in prop::collection::vec(-1e-2f64..1e-2, 2),
    ) {
        let prob = proximity_problem(1.0).unwrap();
        let pt = PhasePoint::new(DVector::from_vec(x), DVector::from_vec(p));
        let u_star = prob.optimal_control(&pt.x, &pt.p).unwrap();
        let h_star = maximized_hamiltonian(&prob, &pt).unwrap();
        let h = hamiltonian(&prob, &pt, &(&u_star + DVector::from_vec(du))).unwrap();
        prop_assert!(h <= h_star + 1e-12 * h_star.abs().max(1.0));
    }

    /// Dataset files reconstruct bit-identical records.
    #[test]
    fn prop_dataset_round_trip(
        seed in 0u64..1_000,
        count in 1usize..40,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let records: Vec<DatasetRecord> = (0..count)
            .map(|k| DatasetRecord {
                t_g: (k + 1) as f64 * 0.25,
                x: DVector::from_fn(2, |_, _| rng.gen_range(-1e6..1e6)),
                u: DVector::from_fn(1, |_, _| rng.gen_range(-1e3..1e3) * 1e-7),
                p: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
                extremal_id: k,
            })
            .collect();
        let ds = Dataset {
            meta: DatasetMeta {
                problem: "double_integrator".into(),
                state_dim: 2,
                control_dim: 1,
                t_f: 1.0,
                sample_count: count,
                grid_dt: 0.25,
                seed: Some(seed),
                generator_version: "test".into(),
                extremals_built: count,
                extremals_failed: 0,
                conjugate_truncated: 0,
            },
            records,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        mecp::dataset::write_dataset(&ds, &path).unwrap();
        let back = mecp::dataset::read_dataset(&path).unwrap();
        prop_assert_eq!(ds, back);
    }
}
