//! Pipeline driver: dataset generation, training, closed-loop simulation,
//! Monte Carlo batches, conjugate scans, and oracle verification, each
//! emitting CSV/JSON artifacts plus a run manifest.

use clap::{Parser, Subcommand};
use mecp::config::RunConfig;
use mecp::dataset::{generate, read_dataset, sample_terminal_manifold};
use mecp::error::Error;
use mecp::extremal::{build_extremal, BuildConfig};
use mecp::manifest::RunManifest;
use mecp::mlp::{read_model, train, write_model};
use mecp::oracle::{shoot, ShootOptions};
use mecp::problem::Problem;
use mecp::sim::{
    histogram, monte_carlo, run as run_sim, AnalyticController, Controller, MlpController,
    ShootingController, SimResult, ZeroController,
};
use mecp::util::fmt_f64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "mecp", version, about = "Minimum-effort trajectory datasets and neural feedback guidance")]
struct Cli {
    /// Worker threads for generation and Monte Carlo fan-out
    /// (default: MECP_WORKERS or all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the terminal manifold, build extremals, emit the dataset.
    Generate {
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the feedback network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Hidden layer sizes, e.g. "30,30,30" (overrides the config).
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fly one closed-loop simulation and write the trajectory.
    Simulate {
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Batch of dispersed closed-loop runs with histogram summaries.
    MonteCarlo {
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset used for coverage warnings.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write determinant traces for chosen terminal samples.
    ConjugateScan {
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-solve sampled dataset records by shooting; report the pass rate.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional per-record report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_workers(cli.workers);
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn init_workers(flag: Option<usize>) {
    let from_env = std::env::var("MECP_WORKERS").ok().and_then(|v| v.parse().ok());
    if let Some(n) = flag.or(from_env) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cmd: Command) -> mecp::Result<()> {
    match cmd {
        Command::Generate { problem, config, out } => cmd_generate(problem, &config, &out),
        Command::Train { dataset, arch, config, out } => cmd_train(&dataset, arch, config, &out),
        Command::Simulate { problem, config, model, out } => {
            cmd_simulate(problem, &config, model, &out)
        }
        Command::MonteCarlo { problem, config, model, dataset, out_dir } => {
            cmd_monte_carlo(problem, &config, model, dataset, &out_dir)
        }
        Command::ConjugateScan { problem, config, out } => {
            cmd_conjugate_scan(problem, &config, &out)
        }
        Command::Verify { dataset, config, out } => cmd_verify(&dataset, config, out),
    }
}

/// Resolves the problem, honoring a `--problem` flag against the config.
fn resolve_problem(flag: Option<String>, cfg: &RunConfig) -> mecp::Result<Arc<dyn Problem>> {
    if let Some(id) = &flag {
        if *id != cfg.problem.id {
            return Err(Error::Config(format!(
                "problem.id: config says `{}` but --problem says `{id}`",
                cfg.problem.id
            )));
        }
    }
    cfg.problem.build()
}

fn write_atomic(path: &Path, text: &str) -> mecp::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_generate(problem: Option<String>, config: &Path, out: &Path) -> mecp::Result<()> {
    let mut manifest = RunManifest::new("generate");
    manifest.config_path = Some(config.display().to_string());
    let cfg = RunConfig::load(config)?;
    let prob = resolve_problem(problem, &cfg)?;
    let spec = cfg.sampling()?.build()?;
    let integrator = cfg.integrator.build(Some(spec.grid_dt))?;
    manifest.seed = spec.seed();

    let ds = generate(prob.as_ref(), &spec, &integrator)?;
    mecp::dataset::write_dataset(&ds, out)?;
    println!(
        "generate: {} extremals built ({} failed, {} conjugate-truncated), {} records -> {}",
        ds.meta.extremals_built,
        ds.meta.extremals_failed,
        ds.meta.conjugate_truncated,
        ds.records.len(),
        out.display()
    );
    manifest.inputs.push(config.display().to_string());
    manifest.outputs.push(out.display().to_string());
    manifest.write_next_to(out)
}

fn parse_arch(text: &str) -> mecp::Result<Vec<usize>> {
    let hidden: Result<Vec<usize>, _> = text.split(',').map(|s| s.trim().parse()).collect();
    let hidden = hidden.map_err(|_| Error::Config(format!("--arch: cannot parse `{text}`")))?;
    if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
        return Err(Error::Config("--arch: need nonzero hidden sizes".into()));
    }
    Ok(hidden)
}

fn cmd_train(
    dataset: &Path,
    arch: Option<String>,
    config: Option<PathBuf>,
    out: &Path,
) -> mecp::Result<()> {
    let mut manifest = RunManifest::new("train");
    let ds = read_dataset(dataset)?;
    let cfg = config.as_deref().map(RunConfig::load).transpose()?;
    let train_section = cfg.as_ref().and_then(|c| c.train.clone());
    let train_cfg = match &train_section {
        Some(t) => t.build()?,
        None => mecp::mlp::TrainConfig::default(),
    };
    let hidden = match (arch, &train_section) {
        (Some(a), _) => parse_arch(&a)?,
        (None, Some(t)) => t.hidden.clone(),
        (None, None) => return Err(Error::Config("--arch or [train].hidden required".into())),
    };
    manifest.seed = Some(train_cfg.seed);
    manifest.config_path = config.as_ref().map(|p| p.display().to_string());
    manifest.inputs.push(dataset.display().to_string());

    let (model, log) = train(&ds, &hidden, &train_cfg)?;
    write_model(&model, out)?;
    let log_path = out.with_file_name(format!(
        "{}.training_log.csv",
        out.file_stem().unwrap_or_default().to_string_lossy()
    ));
    write_atomic(&log_path, &log.to_csv())?;

    let last = log.epochs.last();
    println!(
        "train: {} epochs, final train MSE {} ({:?}) -> {}",
        log.epochs.len(),
        last.map(|e| fmt_f64(e.train_mse)).unwrap_or_else(|| "n/a".into()),
        log.stop,
        out.display()
    );
    manifest.outputs.push(out.display().to_string());
    manifest.outputs.push(log_path.display().to_string());
    manifest.write_next_to(out)
}

fn make_controller(
    name: &str,
    prob: &Arc<dyn Problem>,
    model: &Option<Arc<mecp::mlp::MlpModel>>,
) -> mecp::Result<Box<dyn Controller>> {
    match name {
        "mlp" => {
            let model = model
                .clone()
                .ok_or_else(|| Error::Config("sim.controller = \"mlp\" requires --model".into()))?;
            Ok(Box::new(MlpController { model }))
        }
        "shooting" => Ok(Box::new(ShootingController::new(
            prob.clone(),
            ShootOptions::for_problem(prob.as_ref()),
        ))),
        "analytic" => {
            if prob.id() != "double_integrator" {
                return Err(Error::Config(
                    "sim.controller = \"analytic\" only exists for double_integrator".into(),
                ));
            }
            Ok(Box::new(AnalyticController))
        }
        "zero" => Ok(Box::new(ZeroController { control_dim: prob.dims().control })),
        other => Err(Error::Config(format!("sim.controller: unknown controller `{other}`"))),
    }
}

fn trajectory_csv(prob: &dyn Problem, result: &SimResult) -> String {
    let dims = prob.dims();
    let mut out = String::from("t");
    for i in 1..=dims.state {
        out.push_str(&format!(",x{i}"));
    }
    for i in 1..=dims.control {
        out.push_str(&format!(",u{i}"));
    }
    out.push('\n');
    for (t, x, u) in &result.samples {
        out.push_str(&fmt_f64(*t));
        for v in x.iter().chain(u.iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

fn summary_csv(prob: &dyn Problem, results: &[SimResult]) -> String {
    let s = prob.dims().constraint;
    let mut out = String::from("run_id,terminal_error");
    for i in 1..=s {
        out.push_str(&format!(",phi{i}"));
    }
    out.push_str(",effort,aborted\n");
    for (i, r) in results.iter().enumerate() {
        out.push_str(&format!("{i},{}", fmt_f64(r.terminal_error)));
        for v in r.terminal_constraint.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push_str(&format!(",{},{}\n", fmt_f64(r.effort), r.aborted));
    }
    out
}

fn histogram_csv(values: &[f64], bins: usize) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for (left, right, count) in histogram(values, bins) {
        out.push_str(&format!("{},{},{count}\n", fmt_f64(left), fmt_f64(right)));
    }
    out
}

fn cmd_simulate(
    problem: Option<String>,
    config: &Path,
    model: Option<PathBuf>,
    out: &Path,
) -> mecp::Result<()> {
    let mut manifest = RunManifest::new("simulate");
    manifest.config_path = Some(config.display().to_string());
    let cfg = RunConfig::load(config)?;
    let prob = resolve_problem(problem, &cfg)?;
    let sim_section = cfg.sim()?;
    let sim_cfg = sim_section.build()?;
    if let Some(p) = &model {
        manifest.inputs.push(p.display().to_string());
    }
    let model = model
        .as_deref()
        .map(|p| read_model(p).map(Arc::new))
        .transpose()?;
    let plant = cfg.problem.build_plant(&sim_section.plant_overrides)?;
    let mut controller = make_controller(&sim_section.controller, &prob, &model)?;

    let result = run_sim(prob.as_ref(), plant.as_ref(), &sim_cfg, controller.as_mut())?;
    write_atomic(out, &trajectory_csv(prob.as_ref(), &result))?;
    let summary_path = out.with_file_name(format!(
        "{}.summary.csv",
        out.file_stem().unwrap_or_default().to_string_lossy()
    ));
    write_atomic(&summary_path, &summary_csv(prob.as_ref(), std::slice::from_ref(&result)))?;

    println!(
        "simulate[{}]: terminal error {:.6e}, effort {:.6e}, median query {:.3e} s{}",
        controller.name(),
        result.terminal_error,
        result.effort,
        result.latency.median,
        if result.aborted {
            format!(" (ABORTED: {})", result.abort_reason.as_deref().unwrap_or("?"))
        } else {
            String::new()
        }
    );
    manifest.inputs.push(config.display().to_string());
    manifest.outputs.push(out.display().to_string());
    manifest.outputs.push(summary_path.display().to_string());
    manifest.write_next_to(out)
}

fn cmd_monte_carlo(
    problem: Option<String>,
    config: &Path,
    model: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out_dir: &Path,
) -> mecp::Result<()> {
    let mut manifest = RunManifest::new("monte-carlo");
    manifest.config_path = Some(config.display().to_string());
    let cfg = RunConfig::load(config)?;
    let prob = resolve_problem(problem, &cfg)?;
    let sim_section = cfg.sim()?;
    let base = sim_section.build()?;
    let mc = cfg.monte_carlo()?;
    let dispersion = mc.dispersion();
    manifest.seed = Some(mc.seed);

    if let Some(ds_path) = &dataset {
        let ds = read_dataset(ds_path)?;
        if let Some(cov) = ds.coverage() {
            for w in mecp::sim::coverage_warnings(&dispersion, &cov, base.t_g0) {
                eprintln!("warning: {w}");
            }
        }
        manifest.inputs.push(ds_path.display().to_string());
    }

    let model = model
        .as_deref()
        .map(|p| read_model(p).map(Arc::new))
        .transpose()?;
    let controller_name = sim_section.controller.clone();
    // Fail fast on an unbuildable controller before fanning out.
    make_controller(&controller_name, &prob, &model)?;
    let prob_for_factory = prob.clone();
    let model_for_factory = model.clone();
    let factory = move || {
        make_controller(&controller_name, &prob_for_factory, &model_for_factory)
            .expect("controller construction validated before the batch")
    };
    let problem_section = cfg.problem.clone();
    let base_overrides = sim_section.plant_overrides.clone();
    let plant_factory = move |params: &std::collections::BTreeMap<String, f64>| {
        let mut merged = base_overrides.clone();
        merged.extend(params.iter().map(|(k, v)| (k.clone(), *v)));
        problem_section.build_plant(&merged)
    };

    let summary = monte_carlo(prob.as_ref(), &base, &dispersion, mc.runs, &factory, &plant_factory)?;

    std::fs::create_dir_all(out_dir)?;
    let summary_path = out_dir.join("summary.csv");
    write_atomic(&summary_path, &summary_csv(prob.as_ref(), &summary.results))?;
    let errors: Vec<f64> = summary
        .results
        .iter()
        .filter(|r| !r.aborted)
        .map(|r| r.terminal_error)
        .collect();
    let efforts: Vec<f64> = summary
        .results
        .iter()
        .filter(|r| !r.aborted)
        .map(|r| r.effort)
        .collect();
    let err_hist = out_dir.join("hist_terminal_error.csv");
    let effort_hist = out_dir.join("hist_effort.csv");
    write_atomic(&err_hist, &histogram_csv(&errors, mc.bins))?;
    write_atomic(&effort_hist, &histogram_csv(&efforts, mc.bins))?;
    let mut outputs = vec![summary_path, err_hist, effort_hist];

    if mc.write_trajectories {
        for (i, r) in summary.results.iter().enumerate() {
            let p = out_dir.join(format!("run_{i:04}.csv"));
            write_atomic(&p, &trajectory_csv(prob.as_ref(), r))?;
            outputs.push(p);
        }
    }

    println!(
        "monte-carlo: {} runs ({} aborted), max terminal error {:.6e}, mean {:.6e}, max effort {:.6e}",
        summary.results.len(),
        summary.aborted_runs,
        summary.max_terminal_error,
        summary.mean_terminal_error,
        summary.max_effort
    );
    manifest.inputs.push(config.display().to_string());
    manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    manifest.write_next_to(&out_dir.join("summary.csv"))
}

fn cmd_conjugate_scan(problem: Option<String>, config: &Path, out: &Path) -> mecp::Result<()> {
    let mut manifest = RunManifest::new("conjugate-scan");
    manifest.config_path = Some(config.display().to_string());
    let cfg = RunConfig::load(config)?;
    let prob = resolve_problem(problem, &cfg)?;
    let spec = cfg.sampling()?.build()?;
    let integrator = cfg.integrator.build(Some(spec.grid_dt))?;
    manifest.seed = spec.seed();
    let count = cfg
        .conjugate_scan
        .as_ref()
        .and_then(|c| c.count)
        .unwrap_or_else(|| spec.count.min(5));

    let samples = sample_terminal_manifold(prob.as_ref(), &spec)?;
    let mut build_cfg = BuildConfig::new(integrator);
    // Trace the full span; truncation is reported, not applied.
    build_cfg.detect_conjugate = false;
    build_cfg.check_legendre = false;

    let mut trace_csv = String::from("extremal_id,sigma,det\n");
    let mut summary = String::from("extremal_id,conjugate_time,horizon\n");
    for (i, sample) in samples.iter().take(count).enumerate() {
        let traj = build_extremal(prob.as_ref(), sample, &build_cfg)?;
        for (sigma, det) in &traj.det_trace {
            trace_csv.push_str(&format!("{i},{},{}\n", fmt_f64(*sigma), fmt_f64(*det)));
        }
        let eps = build_cfg.conjugate.eps_excl_factor * prob.final_time();
        let tc = mecp::extremal::detect_conjugate_time(
            &traj.det_trace,
            eps,
            build_cfg.conjugate.delta_rank,
            |s| {
                // Linear interpolation of the recorded trace for refinement.
                match traj.det_trace.binary_search_by(|(t, _)| t.partial_cmp(&s).unwrap()) {
                    Ok(k) => traj.det_trace[k].1,
                    Err(k) if k > 0 && k < traj.det_trace.len() => {
                        let (t0, d0) = traj.det_trace[k - 1];
                        let (t1, d1) = traj.det_trace[k];
                        d0 + (d1 - d0) * (s - t0) / (t1 - t0)
                    }
                    _ => 0.0,
                }
            },
        )?;
        summary.push_str(&format!(
            "{i},{},{}\n",
            tc.map(fmt_f64).unwrap_or_default(),
            fmt_f64(tc.unwrap_or(prob.final_time()).min(prob.final_time()))
        ));
        println!(
            "extremal {i}: conjugate time {}",
            tc.map(|t| format!("{t:.6}")).unwrap_or_else(|| "none".into())
        );
    }
    write_atomic(out, &trace_csv)?;
    let summary_path = out.with_file_name(format!(
        "{}.summary.csv",
        out.file_stem().unwrap_or_default().to_string_lossy()
    ));
    write_atomic(&summary_path, &summary)?;
    manifest.inputs.push(config.display().to_string());
    manifest.outputs.push(out.display().to_string());
    manifest.outputs.push(summary_path.display().to_string());
    manifest.write_next_to(out)
}

fn cmd_verify(dataset: &Path, config: Option<PathBuf>, out: Option<PathBuf>) -> mecp::Result<()> {
    let mut manifest = RunManifest::new("verify");
    let ds = read_dataset(dataset)?;
    let cfg = config.as_deref().map(RunConfig::load).transpose()?;
    let prob: Arc<dyn Problem> = match &cfg {
        Some(c) => {
            if c.problem.id != ds.meta.problem {
                return Err(Error::Config(format!(
                    "problem.id: config says `{}` but the dataset was generated for `{}`",
                    c.problem.id, ds.meta.problem
                )));
            }
            c.problem.build()?
        }
        None => mecp::problems::make_problem(
            &ds.meta.problem,
            &mecp::problems::GliderParams::default(),
            ds.meta.t_f,
        )?,
    };
    let verify = cfg.as_ref().and_then(|c| c.verify.clone()).unwrap_or_default();
    manifest.seed = Some(verify.seed);
    manifest.config_path = config.as_ref().map(|p| p.display().to_string());
    manifest.inputs.push(dataset.display().to_string());

    let total = ds.records.len();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let count = ((total as f64 * verify.fraction).ceil() as usize)
        .max(verify.min_count)
        .min(total);
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(verify.seed);
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices.sort_unstable();

    let opts = ShootOptions::for_problem(prob.as_ref());
    let mut passes = 0usize;
    let mut report = String::from("record,extremal_id,t_g,converged,iterations,u_rel_err,pass\n");
    for &idx in &indices {
        let r = &ds.records[idx];
        let res = shoot(prob.as_ref(), &r.x, r.t_g, &r.p, &opts)?;
        let (pass, rel_err) = if res.converged {
            let u = prob.optimal_control(&r.x, &res.p0)?;
            let rel = (&u - &r.u).norm() / r.u.norm().max(1e-9);
            (rel <= verify.tolerance, rel)
        } else {
            (false, f64::NAN)
        };
        passes += pass as usize;
        report.push_str(&format!(
            "{idx},{},{},{},{},{},{}\n",
            r.extremal_id,
            fmt_f64(r.t_g),
            res.converged,
            res.iterations,
            if rel_err.is_nan() { String::new() } else { fmt_f64(rel_err) },
            pass
        ));
    }
    let rate = passes as f64 / count as f64;
    println!("verify: {passes}/{count} records re-solved within tolerance (pass rate {rate:.4})");

    if let Some(out_path) = &out {
        write_atomic(out_path, &report)?;
        manifest.outputs.push(out_path.display().to_string());
        manifest.write_next_to(out_path)?;
    } else {
        manifest.write_next_to(dataset)?;
    }
    if rate < verify.min_pass_rate {
        return Err(Error::ContractViolation(format!(
            "verify pass rate {rate:.4} below required {:.4}",
            verify.min_pass_rate
        )));
    }
    Ok(())
}
