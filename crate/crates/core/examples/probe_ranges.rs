use mecp::dataset::{sample_terminal_manifold, SamplingMode, SamplingSpec};
use mecp::extremal::{build_extremal, BuildConfig};
use mecp::ode::IntegratorConfig;
use mecp::problems::{glider_problem, proximity_problem, GliderParams};
use mecp::problem::Problem;
use nalgebra::DVector;

fn stats(name: &str, vals: &[f64]) {
    if vals.is_empty() { println!("  {name}: EMPTY"); return; }
    let mut v = vals.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| v[((v.len() - 1) as f64 * p) as usize];
    println!("  {name}: min {:.4} p10 {:.4} p50 {:.4} p90 {:.4} max {:.4}", v[0], q(0.1), q(0.5), q(0.9), v[v.len()-1]);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).cloned().unwrap_or("glider".into());
    let parse = |s: &str| -> (f64, f64) {
        let p: Vec<f64> = s.split(':').map(|x| x.parse().unwrap()).collect();
        (p[0], p[1])
    };
    if which == "glider" {
        let free1 = parse(args.get(2).map(|s| s.as_str()).unwrap_or("400:900"));
        let free2 = parse(args.get(3).map(|s| s.as_str()).unwrap_or("-0.7:0.0"));
        let nu1 = parse(args.get(4).map(|s| s.as_str()).unwrap_or("-4:4"));
        let nu2 = parse(args.get(5).map(|s| s.as_str()).unwrap_or("-4:4"));
        let n: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(600);
        let prob = glider_problem(GliderParams { rho: 0.35, ..GliderParams::default() }, 20.0).unwrap();
        let spec = SamplingSpec {
            count: n, grid_dt: 0.5,
            free_ranges: vec![free1, free2],
            nu_ranges: vec![nu1, nu2],
            mode: SamplingMode::UniformRandom { seed: 17 },
        };
        let samples = sample_terminal_manifold(&prob, &spec).unwrap();
        let cfg = BuildConfig::new(IntegratorConfig::adaptive(1e-9, 1e-9, Some(0.5)));
        let mut ok = 0; let mut truncated = 0; let mut failed = 0;
        let (mut v0, mut g0, mut x0, mut h0, mut eff) = (vec![], vec![], vec![], vec![], vec![]);
        let mut states: Vec<DVector<f64>> = vec![];
        for s in &samples {
            match build_extremal(&prob, s, &cfg) {
                Ok(t) => {
                    if t.conjugate_time.is_some() { truncated += 1; }
                    if let Some(last) = t.samples.last() {
                        if (last.sigma - 20.0).abs() < 1e-6 {
                            ok += 1;
                            v0.push(last.x[0]); g0.push(last.x[1]);
                            x0.push(last.x[2] / 1000.0); h0.push(last.x[3] / 1000.0);
                            eff.push(last.cost_to_go);
                            states.push(last.x.clone());
                        }
                    }
                }
                Err(_) => failed += 1,
            }
        }
        println!("glider: {ok}/{n} full-horizon, {truncated} truncated, {failed} failed");
        stats("V0 [m/s]", &v0); stats("g0 [rad]", &g0); stats("x0 [km]", &x0); stats("h0 [km]", &h0); stats("J", &eff);
        let scale = [100.0, 0.05, 500.0, 500.0];
        for (name, t) in [
            ("vehicle1", [1500.0, 0.7853981633974483, -20000.0, 3500.0]),
            ("vehicle2", [1200.0, 0.0, -20000.0, 3500.0]),
            ("mc lo", [1250.0, -0.1, -19000.0, 4000.0]),
            ("mc hi", [1350.0, 0.1, -21000.0, 6000.0]),
            ("mc mid", [1300.0, 0.0, -20000.0, 5000.0]),
        ] {
            let mut d: Vec<f64> = states.iter()
                .map(|x| (0..4).map(|i| ((x[i] - t[i]) / scale[i]).powi(2)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = 5.min(d.len());
            println!("  NN({name}): {:?}", &d[..k].iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());
        }
    } else {
        let free = parse(args.get(2).map(|s| s.as_str()).unwrap_or("-0.5:0.5"));
        let nu = parse(args.get(3).map(|s| s.as_str()).unwrap_or("-1:1"));
        let n: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(600);
        let prob = proximity_problem(1.0).unwrap();
        let spec = SamplingSpec {
            count: n, grid_dt: 0.01,
            free_ranges: vec![free, free],
            nu_ranges: vec![nu, nu],
            mode: SamplingMode::UniformRandom { seed: 17 },
        };
        let samples = sample_terminal_manifold(&prob, &spec).unwrap();
        let cfg = BuildConfig::new(IntegratorConfig::adaptive(1e-10, 1e-12, Some(0.01)));
        let mut ok = 0; let mut truncated = 0; let mut failed = 0;
        let mut states: Vec<DVector<f64>> = vec![];
        for s in &samples {
            match build_extremal(&prob, s, &cfg) {
                Ok(t) => {
                    if t.conjugate_time.is_some() { truncated += 1; }
                    if let Some(last) = t.samples.last() {
                        if (last.sigma - 1.0).abs() < 1e-9 { ok += 1; states.push(last.x.clone()); }
                    }
                }
                Err(_) => failed += 1,
            }
        }
        println!("proximity: {ok}/{n} full-horizon, {truncated} truncated, {failed} failed");
        for coord in 0..4 {
            let vals: Vec<f64> = states.iter().map(|x| x[coord]).collect();
            stats(&format!("x{coord}"), &vals);
        }
        let scale = [0.05, 0.05, 0.05, 0.05];
        for (name, t) in [
            ("sc1", [0.2, 0.2, -0.1, -0.1]),
            ("sc2", [0.2, 0.2, 0.1, 0.1]),
            ("mc lo", [0.1, 0.1, -0.1, -0.1]),
            ("mc hi", [0.3, 0.3, 0.1, 0.1]),
        ] {
            let mut d: Vec<f64> = states.iter()
                .map(|x| (0..4).map(|i| ((x[i] - t[i]) / scale[i]).powi(2)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = 5.min(d.len());
            println!("  NN({name}): {:?}", &d[..k].iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());
        }
    }
}
