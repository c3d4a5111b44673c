use mecp::extremal::{perturbed_terminal_sample, variational_states, BuildConfig, Direction, TerminalSample};
use mecp::extremal::propagate_phase;
use mecp::ode::{IntegratorConfig, Method};
use mecp::problem::Problem;
use mecp::problems::{glider_problem, GliderParams};
use nalgebra::DVector;

fn main() {
    let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
    let s = TerminalSample::from_free_coords(&prob, &[700.0, -0.35], DVector::from_vec(vec![-3.0, -2.0])).unwrap();
    let integ = IntegratorConfig { method: Method::Rk4Fixed { step: 0.01 }, max_steps: 10_000_000, output_dt: Some(5.0) };
    let mut cfg = BuildConfig::new(integ);
    cfg.detect_conjugate = false;
    cfg.check_legendre = false;
    let states = variational_states(&prob, &s, &cfg).unwrap();
    let n = 4;
    for (sg, dx, _) in states.iter().filter(|(sg, _, _)| *sg > 0.0) {
        println!("sigma {sg}");
        for j in 0..n {
            let delta = 1e-6;
            let sp = perturbed_terminal_sample(&prob, &s, j, delta).unwrap();
            let sm = perturbed_terminal_sample(&prob, &s, j, -delta).unwrap();
            let xp = propagate_phase(&prob, &sp.phase(), *sg, Direction::Backward, &integ).unwrap().end_y;
            let xm = propagate_phase(&prob, &sm.phase(), *sg, Direction::Backward, &integ).unwrap().end_y;
            let fd: Vec<f64> = (0..n).map(|i| (xp[i] - xm[i]) / (2.0 * delta)).collect();
            let var: Vec<f64> = (0..n).map(|i| dx[(i, j)]).collect();
            let err: f64 = (0..n).map(|i| (fd[i] - var[i]).abs()).fold(0.0, f64::max);
            let scale: f64 = var.iter().map(|v| v.abs()).fold(1e-9, f64::max);
            println!("  col {j}: rel err {:.3e}   var {:?}", err / scale, var.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
            if err / scale > 1e-3 {
                println!("       fd {:?}", fd.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
            }
        }
    }
}
