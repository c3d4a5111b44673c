use mecp::dataset::{sample_terminal_manifold, SamplingMode, SamplingSpec};
use mecp::extremal::{variational_states, BuildConfig, TerminalSample};
use mecp::ode::IntegratorConfig;
use mecp::problem::Problem;
use mecp::problems::{glider_problem, GliderParams};
use nalgebra::{DMatrix, DVector};

fn terminal_state_of(prob: &dyn Problem, q: &DVector<f64>) -> mecp::Result<TerminalSample> {
    TerminalSample::from_free_coords(prob, &[q[0], q[1]], DVector::from_vec(vec![q[2], q[3]]))
}

/// Backward state at sigma = t_f and its Jacobian wrt q = (free, nu).
fn back_state(prob: &dyn Problem, q: &DVector<f64>, with_jac: bool)
    -> mecp::Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let sample = terminal_state_of(prob, q)?;
    let mut cfg = BuildConfig::new(IntegratorConfig::adaptive(1e-9, 1e-9, None));
    cfg.detect_conjugate = false; // want the full horizon regardless
    cfg.check_legendre = false;
    if with_jac {
        let states = variational_states(prob, &sample, &cfg)?;
        let (sg, dx, _) = states.last().unwrap();
        assert!((sg - prob.final_time()).abs() < 1e-9);
        // x itself via a phase propagation piggybacked on variational run:
        // rebuild from build_extremal-free path: use propagate_phase
        let run = mecp::extremal::propagate_phase(
            prob, &sample.phase(), prob.final_time(), mecp::extremal::Direction::Backward,
            &IntegratorConfig::adaptive(1e-9, 1e-9, None))?;
        let n = prob.dims().state;
        let x = run.end_y.rows(0, n).into_owned();
        Ok((x, Some(dx.clone())))
    } else {
        let run = mecp::extremal::propagate_phase(
            prob, &sample.phase(), prob.final_time(), mecp::extremal::Direction::Backward,
            &IntegratorConfig::adaptive(1e-9, 1e-9, None))?;
        let n = prob.dims().state;
        Ok((run.end_y.rows(0, n).into_owned(), None))
    }
}

fn main() {
    let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
    let scale = DVector::from_vec(vec![100.0, 0.05, 500.0, 500.0]);
    // seed cloud
    let spec = SamplingSpec {
        count: 400, grid_dt: 20.0,
        free_ranges: vec![(400.0, 900.0), (-0.7, 0.0)],
        nu_ranges: vec![(-4.0, 4.0), (-4.0, 4.0)],
        mode: SamplingMode::UniformRandom { seed: 17 },
    };
    let samples = sample_terminal_manifold(&prob, &spec).unwrap();
    for target in [
        DVector::from_vec(vec![1500.0, 45f64.to_radians(), -20000.0, 3500.0]),
        DVector::from_vec(vec![1200.0, 0.0, -20000.0, 3500.0]),
        DVector::from_vec(vec![1300.0, 0.0, -20000.0, 5000.0]),
    ] {
        // nearest cloud point in q-space result
        let mut best: Option<(f64, DVector<f64>)> = None;
        for s in &samples {
            let q = DVector::from_vec(vec![s.x_f[0], s.x_f[1], s.nu[0], s.nu[1]]);
            if let Ok((x, _)) = back_state(&prob, &q, false) {
                let d: f64 = (0..4).map(|i| ((x[i] - target[i]) / scale[i]).powi(2)).sum::<f64>().sqrt();
                if best.as_ref().map(|(bd, _)| d < *bd).unwrap_or(true) { best = Some((d, q)); }
            }
        }
        let (d0, mut q) = best.unwrap();
        println!("target {:?}: seed dist {:.2} q0 {:?}", target.as_slice(), d0, q.as_slice());
        let mut converged = false;
        for it in 0..60 {
            let (x, jac) = match back_state(&prob, &q, true) {
                Ok(v) => v, Err(e) => { println!("  it {it}: propagation failed: {e}"); break; }
            };
            let r = DVector::from_fn(4, |i, _| (x[i] - target[i]) / scale[i]);
            let rn = r.norm();
            if rn < 1e-8 { println!("  CONVERGED it {it}: q = {:?}", q.as_slice()); converged = true; break; }
            let jac = jac.unwrap();
            let js = DMatrix::from_fn(4, 4, |i, j| jac[(i, j)] / scale[i]);
            let Some(delta) = js.lu().solve(&(-&r)) else { println!("  singular"); break; };
            let mut alpha = 1.0f64; let mut ok = false;
            for _ in 0..20 {
                let trial = &q + &delta * alpha;
                if let Ok((xt, _)) = back_state(&prob, &trial, false) {
                    let rt = DVector::from_fn(4, |i, _| (xt[i] - target[i]) / scale[i]).norm();
                    if rt < (1.0 - 1e-4 * alpha) * rn { q = trial; ok = true; break; }
                }
                alpha *= 0.5;
            }
            if it % 5 == 0 || !ok { println!("  it {it}: |r| {rn:.4e} alpha {alpha:.4}"); }
            if !ok { break; }
        }
        if converged {
            let s = terminal_state_of(&prob, &q).unwrap();
            println!("  => V_f {:.2} gamma_f {:.4} nu ({:.4}, {:.4})", s.x_f[0], s.x_f[1], s.nu[0], s.nu[1]);
        }
    }
}
