use mecp::dataset::{sample_terminal_manifold, SamplingMode, SamplingSpec};
use mecp::extremal::{build_extremal, BuildConfig};
use mecp::ode::IntegratorConfig;
use mecp::oracle::{shoot, ShootOptions};
use mecp::problem::Problem;
use mecp::problems::{glider_problem, GliderParams};
use nalgebra::DVector;

fn main() {
    let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
    let spec = SamplingSpec {
        count: 400, grid_dt: 0.5,
        free_ranges: vec![(400.0, 900.0), (-0.7, 0.0)],
        nu_ranges: vec![(-4.0, 4.0), (-4.0, 4.0)],
        mode: SamplingMode::UniformRandom { seed: 17 },
    };
    let samples = sample_terminal_manifold(&prob, &spec).unwrap();
    let cfg = BuildConfig::new(IntegratorConfig::adaptive(1e-9, 1e-9, Some(20.0)));
    // scale-normalized distance to pick the best cloud seed
    let scale = [300.0, 0.3, 5000.0, 1500.0];
    for target in [
        DVector::from_vec(vec![1500.0, 45f64.to_radians(), -20000.0, 3500.0]),
        DVector::from_vec(vec![1200.0, 0.0, -20000.0, 3500.0]),
        DVector::from_vec(vec![1300.0, 0.0, -20000.0, 5000.0]),
    ] {
        let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
        for s in &samples {
            if let Ok(t) = build_extremal(&prob, s, &cfg) {
                if let Some(last) = t.samples.last() {
                    if (last.sigma - 20.0).abs() < 1e-6 {
                        let d: f64 = (0..4).map(|i| ((last.x[i] - target[i]) / scale[i]).powi(2)).sum();
                        if best.as_ref().map(|(bd, _, _)| d < *bd).unwrap_or(true) {
                            best = Some((d, last.x.clone(), last.p.clone()));
                        }
                    }
                }
            }
        }
        let (d, x_near, p_near) = best.unwrap();
        println!("target {:?}", target.as_slice());
        println!("  seed dist {:.3} x_near {:?}", d.sqrt(), x_near.as_slice());
        // continuation from x_near to target
        let opts = ShootOptions { integrator: IntegratorConfig::adaptive(1e-10, 1e-10, None), tol: 1e-6, max_iterations: 50 };
        let mut p_guess = p_near.clone();
        let steps = 30;
        let mut done = true;
        for k in 1..=steps {
            let lam = k as f64 / steps as f64;
            let x_c = &x_near * (1.0 - lam) + &target * lam;
            match shoot(&prob, &x_c, 20.0, &p_guess, &opts) {
                Ok(r) if r.converged => { p_guess = r.p0.clone(); }
                other => { println!("  continuation stalled at lambda={lam:.2}: {other:?}"); done = false; break; }
            }
        }
        if done {
            // forward propagate to read the terminal sample
            let r = shoot(&prob, &target, 20.0, &p_guess, &opts).unwrap();
            let (t_end, x_end, p_end, _) = r.trajectory.last().unwrap().clone();
            println!("  CONVERGED p0 = {:?}", r.p0.as_slice());
            println!("  terminal t={t_end} x_f = {:?}", x_end.as_slice());
            println!("  nu = (p_x, p_h) = ({:.4}, {:.4}), p_V_f {:.2e} p_gamma_f {:.2e}", p_end[2], p_end[3], p_end[0], p_end[1]);
            println!("  cost J = {:.1}", r.cost);
        }
    }
}
