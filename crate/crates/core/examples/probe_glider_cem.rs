use mecp::extremal::{build_extremal, BuildConfig, TerminalSample};
use mecp::ode::IntegratorConfig;
use mecp::problems::{glider_problem, GliderParams};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
    let cfg = BuildConfig::new(IntegratorConfig::adaptive(1e-8, 1e-8, Some(20.0)));
    let scale = [100.0, 0.05, 500.0, 500.0];
    let targets = [
        ("vehicle1", [1500.0, 0.7853981633974483, -20000.0, 3500.0]),
        ("vehicle2", [1200.0, 0.0, -20000.0, 3500.0]),
        ("mc_lo", [1250.0, -0.1, -19000.0, 4000.0]),
        ("mc_hi", [1350.0, 0.1, -21000.0, 6000.0]),
    ];
    let mut rng = ChaCha20Rng::seed_from_u64(5);

    for (name, target) in targets {
        // box: (V_f, gamma_f, nu1, nu2)
        let mut lo = [400.0, -1.1, -6.0, -20.0];
        let mut hi = [900.0, 0.0, 10.0, 6.0];
        for round in 0..4 {
            let k = 400;
            let mut scored: Vec<(f64, [f64; 4])> = Vec::new();
            for _ in 0..k {
                let q: [f64; 4] = std::array::from_fn(|i| rng.gen_range(lo[i]..=hi[i]));
                let Ok(s) = TerminalSample::from_free_coords(
                    &prob, &q[..2], DVector::from_row_slice(&q[2..])) else { continue };
                let Ok(t) = build_extremal(&prob, &s, &cfg) else { continue };
                let Some(last) = t.samples.last() else { continue };
                if (last.sigma - 20.0).abs() > 1e-6 { continue; }
                let d: f64 = (0..4)
                    .map(|i| ((last.x[i] - target[i]) / scale[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                scored.push((d, q));
            }
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let elite = &scored[..scored.len().min(40)];
            for i in 0..4 {
                let vals: Vec<f64> = elite.iter().map(|(_, q)| q[i]).collect();
                let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let pad = 0.25 * (mx - mn).max(1e-3);
                lo[i] = mn - pad;
                hi[i] = mx + pad;
            }
            println!(
                "{name} round {round}: best {:.3} box V_f [{:.0},{:.0}] g_f [{:.3},{:.3}] nu1 [{:.2},{:.2}] nu2 [{:.2},{:.2}]",
                scored[0].0, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2], lo[3], hi[3]
            );
        }
    }
}
