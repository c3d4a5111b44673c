use mecp::extremal::{build_extremal, BuildConfig, TerminalSample};
use mecp::ode::IntegratorConfig;
use mecp::problems::{glider_problem, GliderParams};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

struct Eval<'a> {
    prob: &'a mecp::problems::GliderProblem,
    cfg: BuildConfig,
    target: [f64; 4],
    scale: [f64; 4],
}

impl Eval<'_> {
    fn f(&self, q: &[f64; 4]) -> f64 {
        let Ok(s) = TerminalSample::from_free_coords(
            self.prob, &q[..2], DVector::from_row_slice(&q[2..])) else { return 1e3 };
        let Ok(t) = build_extremal(self.prob, &s, &self.cfg) else { return 1e3 };
        let Some(last) = t.samples.last() else { return 1e3 };
        if (last.sigma - 20.0).abs() > 1e-6 { return 1e3; }
        (0..4).map(|i| ((last.x[i] - self.target[i]) / self.scale[i]).powi(2)).sum::<f64>().sqrt()
    }
}

fn nelder_mead(eval: &Eval, start: [f64; 4], step: [f64; 4], iters: usize) -> ([f64; 4], f64) {
    let n = 4;
    let mut simplex: Vec<([f64; 4], f64)> = Vec::new();
    simplex.push((start, eval.f(&start)));
    for i in 0..n {
        let mut q = start;
        q[i] += step[i];
        simplex.push((q, eval.f(&q)));
    }
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if simplex[0].1 < 1e-3 { break; }
        let centroid: [f64; 4] = std::array::from_fn(|i| {
            simplex[..n].iter().map(|(q, _)| q[i]).sum::<f64>() / n as f64
        });
        let worst = simplex[n];
        let refl: [f64; 4] = std::array::from_fn(|i| centroid[i] + (centroid[i] - worst.0[i]));
        let fr = eval.f(&refl);
        if fr < simplex[0].1 {
            let exp: [f64; 4] = std::array::from_fn(|i| centroid[i] + 2.0 * (centroid[i] - worst.0[i]));
            let fe = eval.f(&exp);
            simplex[n] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (refl, fr);
        } else {
            let con: [f64; 4] = std::array::from_fn(|i| centroid[i] + 0.5 * (worst.0[i] - centroid[i]));
            let fc = eval.f(&con);
            if fc < worst.1 {
                simplex[n] = (con, fc);
            } else {
                let best = simplex[0].0;
                for j in 1..=n {
                    let q: [f64; 4] = std::array::from_fn(|i| best[i] + 0.5 * (simplex[j].0[i] - best[i]));
                    let fq = eval.f(&q);
                    simplex[j] = (q, fq);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0]
}

fn main() {
    let prob = glider_problem(GliderParams { rho: 0.35, ..GliderParams::default() }, 20.0).unwrap();
    let cfg = BuildConfig::new(IntegratorConfig::adaptive(1e-9, 1e-9, Some(20.0)));
    let scale = [100.0, 0.05, 500.0, 500.0];
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for (name, target) in [
        ("vehicle1", [1500.0, 0.7853981633974483, -20000.0, 3500.0]),
        ("vehicle2", [1200.0, 0.0, -20000.0, 3500.0]),
        ("mc_lo", [1250.0, -0.1, -19000.0, 4000.0]),
        ("mc_hi", [1350.0, 0.1, -21000.0, 6000.0]),
        ("mc_mid", [1300.0, 0.0, -20000.0, 5000.0]),
    ] {
        let eval = Eval { prob: &prob, cfg: cfg.clone(), target, scale };
        // multistart: random cloud seeds, keep the best NM outcome
        let mut best = ([0.0; 4], f64::INFINITY);
        for _ in 0..6 {
            let start = [
                rng.gen_range(450.0..900.0),
                rng.gen_range(-1.0..0.0),
                rng.gen_range(-5.0..8.0),
                rng.gen_range(-16.0..4.0),
            ];
            let got = nelder_mead(&eval, start, [40.0, 0.08, 1.0, 1.5], 250);
            if got.1 < best.1 { best = got; }
            if best.1 < 1e-3 { break; }
        }
        println!("{name}: dist {:.4} q = V_f {:.1} g_f {:.4} nu ({:.3}, {:.3})",
            best.1, best.0[0], best.0[1], best.0[2], best.0[3]);
    }
}
