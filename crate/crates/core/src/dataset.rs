//! Dataset generation: sample the terminal manifold, backward-propagate one
//! truncated extremal per sample, and flatten the grid points into
//! `(t_g, x, u)` training records. The costate is stored as auxiliary
//! columns so records can be re-verified by the shooting oracle.

use crate::error::Error;
use crate::extremal::{build_extremal, BuildConfig, TerminalSample};
use crate::problem::Problem;
use crate::util::fmt_f64;
use crate::Result;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

pub const DATASET_HEADER: &str = "# mecp-dataset v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    UniformGrid,
    UniformRandom { seed: u64 },
}

/// How the terminal manifold is sampled: ranges for the free terminal-state
/// coordinates and for the multipliers, for `N` samples total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub count: usize,
    pub grid_dt: f64,
    pub free_ranges: Vec<(f64, f64)>,
    pub nu_ranges: Vec<(f64, f64)>,
    pub mode: SamplingMode,
}

impl SamplingSpec {
    pub fn validate(&self, prob: &dyn Problem) -> Result<()> {
        let dims = prob.dims();
        if self.count == 0 {
            return Err(Error::Config("sampling.n: must be >= 1".into()));
        }
        if !(self.grid_dt.is_finite() && self.grid_dt > 0.0) {
            return Err(Error::Config("sampling.dt: must be positive".into()));
        }
        if self.free_ranges.len() != dims.state - dims.constraint {
            return Err(Error::Config(format!(
                "sampling.free: expected {} ranges (free terminal coordinates), got {}",
                dims.state - dims.constraint,
                self.free_ranges.len()
            )));
        }
        if self.nu_ranges.len() != dims.constraint {
            return Err(Error::Config(format!(
                "sampling.nu: expected {} ranges (multipliers), got {}",
                dims.constraint,
                self.nu_ranges.len()
            )));
        }
        for (name, ranges) in [("free", &self.free_ranges), ("nu", &self.nu_ranges)] {
            for (i, (lo, hi)) in ranges.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::Config(format!(
                        "sampling.{name}[{i}]: range [{lo}, {hi}] must be finite with lo <= hi"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Option<u64> {
        match self.mode {
            SamplingMode::UniformGrid => None,
            SamplingMode::UniformRandom { seed } => Some(seed),
        }
    }
}

fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    lo + (hi - lo) * t
}

/// Draws `N` terminal samples per the spec's mode.
pub fn sample_terminal_manifold(
    prob: &dyn Problem,
    spec: &SamplingSpec,
) -> Result<Vec<TerminalSample>> {
    spec.validate(prob)?;
    let dims = prob.dims();
    let free_dims = dims.state - dims.constraint;
    let total_dims = dims.state;

    let coords: Vec<Vec<f64>> = match &spec.mode {
        SamplingMode::UniformRandom { seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            (0..spec.count)
                .map(|_| {
                    spec.free_ranges
                        .iter()
                        .chain(spec.nu_ranges.iter())
                        .map(|&(lo, hi)| lerp(lo, hi, rng.gen::<f64>()))
                        .collect()
                })
                .collect()
        }
        SamplingMode::UniformGrid => {
            let per_dim = (spec.count as f64).powf(1.0 / total_dims as f64).round() as usize;
            if per_dim.pow(total_dims as u32) != spec.count {
                return Err(Error::Config(format!(
                    "sampling.n: {} is not a {total_dims}-dimensional lattice (nearest: {})",
                    spec.count,
                    per_dim.max(1).pow(total_dims as u32)
                )));
            }
            let ranges: Vec<(f64, f64)> = spec
                .free_ranges
                .iter()
                .chain(spec.nu_ranges.iter())
                .copied()
                .collect();
            let mut out = Vec::with_capacity(spec.count);
            let mut idx = vec![0usize; total_dims];
            loop {
                let point: Vec<f64> = (0..total_dims)
                    .map(|d| {
                        let (lo, hi) = ranges[d];
                        if per_dim == 1 {
                            0.5 * (lo + hi)
                        } else {
                            lerp(lo, hi, idx[d] as f64 / (per_dim - 1) as f64)
                        }
                    })
                    .collect();
                out.push(point);
                // Odometer increment, last dimension fastest.
                let mut d = total_dims;
                loop {
                    if d == 0 {
                        break;
                    }
                    d -= 1;
                    idx[d] += 1;
                    if idx[d] < per_dim {
                        break;
                    }
                    idx[d] = 0;
                }
                if idx.iter().all(|&i| i == 0) {
                    break;
                }
            }
            out
        }
    };

    coords
        .into_iter()
        .enumerate()
        .map(|(index, c)| {
            let nu = DVector::from_row_slice(&c[free_dims..]);
            TerminalSample::from_free_coords(prob, &c[..free_dims], nu)
                .map_err(|e| Error::RejectedSample { index, reason: e.to_string() })
        })
        .collect()
}

/// One training record plus auxiliary provenance columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub t_g: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// Auxiliary costate, ignored by the trainer, used by oracle re-checks.
    pub p: DVector<f64>,
    pub extremal_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub problem: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub t_f: f64,
    pub sample_count: usize,
    pub grid_dt: f64,
    pub seed: Option<u64>,
    pub generator_version: String,
    pub extremals_built: usize,
    pub extremals_failed: usize,
    pub conjugate_truncated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    /// Per-coordinate `(min, max)` of the stored states, plus the `t_g`
    /// range; the coverage box a controller can be trusted inside.
    pub fn coverage(&self) -> Option<(Vec<(f64, f64)>, (f64, f64))> {
        let first = self.records.first()?;
        let n = first.x.len();
        let mut boxes = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
        let mut t_range = (f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.records {
            for i in 0..n {
                boxes[i].0 = boxes[i].0.min(r.x[i]);
                boxes[i].1 = boxes[i].1.max(r.x[i]);
            }
            t_range.0 = t_range.0.min(r.t_g);
            t_range.1 = t_range.1.max(r.t_g);
        }
        Some((boxes, t_range))
    }
}

/// Runs Procedure 1: every terminal sample is propagated backward and its
/// grid points `t_g = dt, 2 dt, ... <= T` become records. Failed extremals
/// are logged and skipped.
pub fn generate(
    prob: &dyn Problem,
    spec: &SamplingSpec,
    integrator: &crate::ode::IntegratorConfig,
) -> Result<Dataset> {
    let samples = sample_terminal_manifold(prob, spec)?;
    let mut build_cfg = BuildConfig::new(*integrator);
    build_cfg.integrator.output_dt = Some(spec.grid_dt);

    let results: Vec<_> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| (i, build_extremal(prob, s, &build_cfg)))
        .collect();

    let mut records = Vec::new();
    let mut built = 0usize;
    let mut failed = 0usize;
    let mut truncated = 0usize;
    for (i, res) in results {
        match res {
            Ok(traj) => {
                built += 1;
                if traj.conjugate_time.is_some() {
                    truncated += 1;
                }
                for pt in &traj.samples {
                    let ratio = pt.sigma / spec.grid_dt;
                    if (ratio - ratio.round()).abs() > 1e-9 {
                        continue; // truncation endpoint off the grid
                    }
                    records.push(DatasetRecord {
                        t_g: pt.sigma,
                        x: pt.x.clone(),
                        u: pt.u.clone(),
                        p: pt.p.clone(),
                        extremal_id: i,
                    });
                }
            }
            Err(e) => {
                failed += 1;
                log::warn!("extremal {i} skipped: {e}");
            }
        }
    }
    if built == 0 || records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let dims = prob.dims();
    Ok(Dataset {
        meta: DatasetMeta {
            problem: prob.id().to_string(),
            state_dim: dims.state,
            control_dim: dims.control,
            t_f: prob.final_time(),
            sample_count: spec.count,
            grid_dt: spec.grid_dt,
            seed: spec.seed(),
            generator_version: env!("CARGO_PKG_VERSION").to_string(),
            extremals_built: built,
            extremals_failed: failed,
            conjugate_truncated: truncated,
        },
        records,
    })
}

/// Writes the dataset as UTF-8 CSV with a format tag, a JSON metadata line,
/// and a column header; floats carry 17 significant digits.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(DATASET_HEADER);
    out.push('\n');
    out.push_str(&crate::util::to_json_string(&ds.meta)?);
    out.push('\n');
    out.push_str("t_g");
    for i in 1..=ds.meta.state_dim {
        out.push_str(&format!(",x{i}"));
    }
    for i in 1..=ds.meta.control_dim {
        out.push_str(&format!(",u{i}"));
    }
    for i in 1..=ds.meta.state_dim {
        out.push_str(&format!(",p{i}"));
    }
    out.push_str(",extremal_id\n");
    for r in &ds.records {
        out.push_str(&fmt_f64(r.t_g));
        for v in r.x.iter().chain(r.u.iter()).chain(r.p.iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push_str(&format!(",{}\n", r.extremal_id));
    }

    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from `{s}`"),
    })
}

/// Reads a dataset file back; errors carry 1-based line numbers.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    if header.trim() != DATASET_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `{DATASET_HEADER}`, found `{header}`"),
        });
    }
    let (_, meta_line) = lines
        .next()
        .ok_or(Error::Parse { line: 2, message: "missing metadata line".into() })?;
    let meta: DatasetMeta = serde_json::from_str(meta_line)
        .map_err(|e| Error::Parse { line: 2, message: format!("bad metadata: {e}") })?;
    let (_, columns) = lines
        .next()
        .ok_or(Error::Parse { line: 3, message: "missing column header".into() })?;
    let expected_cols = 1 + 2 * meta.state_dim + meta.control_dim + 1;
    let header_cols = columns.split(',').count();
    if header_cols != expected_cols {
        return Err(Error::Parse {
            line: 3,
            message: format!(
                "column header has {header_cols} fields, metadata implies {expected_cols}"
            ),
        });
    }

    let (n, m) = (meta.state_dim, meta.control_dim);
    let mut records = Vec::new();
    let mut keys = HashSet::new();
    for (idx, row) in lines {
        let line = idx + 1;
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != expected_cols {
            return Err(Error::Parse {
                line,
                message: format!("row has {} fields, expected {expected_cols}", fields.len()),
            });
        }
        let t_g: f64 = parse_field(fields[0], line, "t_g")?;
        let mut cursor = 1;
        let take = |count: usize, what: &str, cursor: &mut usize| -> Result<DVector<f64>> {
            let vals: Result<Vec<f64>> = fields[*cursor..*cursor + count]
                .iter()
                .map(|s| parse_field(s, line, what))
                .collect();
            *cursor += count;
            Ok(DVector::from_vec(vals?))
        };
        let x = take(n, "state", &mut cursor)?;
        let u = take(m, "control", &mut cursor)?;
        let p = take(n, "costate", &mut cursor)?;
        let extremal_id: usize = parse_field(fields[cursor], line, "extremal_id")?;
        if !keys.insert((extremal_id, t_g.to_bits())) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate record key (extremal {extremal_id}, t_g {t_g})"),
            });
        }
        records.push(DatasetRecord { t_g, x, u, p, extremal_id });
    }
    Ok(Dataset { meta, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::IntegratorConfig;
    use crate::problems::{double_integrator_problem, proximity_problem};
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    fn di_spec(count: usize, dt: f64, seed: u64) -> SamplingSpec {
        SamplingSpec {
            count,
            grid_dt: dt,
            free_ranges: vec![],
            nu_ranges: vec![(-30.0, 30.0), (-15.0, 15.0)],
            mode: SamplingMode::UniformRandom { seed },
        }
    }

    #[test]
    fn grid_mode_builds_a_lattice() {
        let prob = proximity_problem(1.0).unwrap();
        let spec = SamplingSpec {
            count: 16,
            grid_dt: 0.1,
            free_ranges: vec![(-0.5, 0.5), (-0.5, 0.5)],
            nu_ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            mode: SamplingMode::UniformGrid,
        };
        let samples = sample_terminal_manifold(&prob, &spec).unwrap();
        assert_eq!(samples.len(), 16);
        // 2 x 2 x 2 x 2 lattice: the free coordinates take both endpoints.
        let mut v3: Vec<f64> = samples.iter().map(|s| s.x_f[2]).collect();
        v3.dedup();
        assert_eq!(samples.iter().filter(|s| s.x_f[2] == -0.5).count(), 8);
        assert_eq!(samples.iter().filter(|s| s.nu[0] == 1.0).count(), 8);

        let bad = SamplingSpec { count: 15, ..spec };
        assert!(matches!(sample_terminal_manifold(&prob, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn zero_width_ranges_repeat_the_seed_point() {
        let prob = proximity_problem(1.0).unwrap();
        let spec = SamplingSpec {
            count: 5,
            grid_dt: 0.1,
            free_ranges: vec![(0.0, 0.0), (0.0, 0.0)],
            nu_ranges: vec![(0.0, 0.0), (0.0, 0.0)],
            mode: SamplingMode::UniformRandom { seed: 1 },
        };
        let samples = sample_terminal_manifold(&prob, &spec).unwrap();
        assert_eq!(samples.len(), 5);
        for s in &samples {
            assert_eq!(s.x_f.amax(), 0.0);
            assert_eq!(s.nu.amax(), 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let prob = proximity_problem(1.0).unwrap();
        let spec = SamplingSpec {
            count: 50,
            grid_dt: 0.1,
            free_ranges: vec![(-0.5, 0.5), (-0.5, 0.5)],
            nu_ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            mode: SamplingMode::UniformRandom { seed: 99 },
        };
        let a = sample_terminal_manifold(&prob, &spec).unwrap();
        let b = sample_terminal_manifold(&prob, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_domain_sample_is_rejected_with_index() {
        use crate::problems::{glider_problem, GliderParams};
        let prob = glider_problem(GliderParams::default(), 20.0).unwrap();
        let spec = SamplingSpec {
            count: 3,
            grid_dt: 0.5,
            // V_f <= 0 violates the state domain.
            free_ranges: vec![(-10.0, -10.0), (0.0, 0.0)],
            nu_ranges: vec![(0.0, 0.0), (0.0, 0.0)],
            mode: SamplingMode::UniformRandom { seed: 4 },
        };
        match sample_terminal_manifold(&prob, &spec) {
            Err(Error::RejectedSample { index: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_counts_follow_the_inclusive_rule() {
        let prob = double_integrator_problem(1.0).unwrap();
        let integ = IntegratorConfig::adaptive(1e-10, 1e-12, None);

        let ds = generate(&prob, &di_spec(1, 0.25, 7), &integ).unwrap();
        let tg: Vec<f64> = ds.records.iter().map(|r| r.t_g).collect();
        assert_eq!(tg.len(), 4);
        for (got, want) in tg.iter().zip([0.25, 0.5, 0.75, 1.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }

        let ds = generate(&prob, &di_spec(1, 0.3, 7), &integ).unwrap();
        let tg: Vec<f64> = ds.records.iter().map(|r| r.t_g).collect();
        assert_eq!(tg.len(), 3);
        for (got, want) in tg.iter().zip([0.3, 0.6, 0.9]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn analytic_record_values() {
        // One extremal seeded at p_f = (-24, 12): the record at t_g = 1 is
        // the analytic initial point x = (1, 0), u = -6.
        let prob = double_integrator_problem(1.0).unwrap();
        let spec = SamplingSpec {
            count: 1,
            grid_dt: 0.25,
            free_ranges: vec![],
            nu_ranges: vec![(-24.0, -24.0), (12.0, 12.0)],
            mode: SamplingMode::UniformRandom { seed: 0 },
        };
        let integ = IntegratorConfig::adaptive(1e-10, 1e-12, None);
        let ds = generate(&prob, &spec, &integ).unwrap();
        let last = ds.records.last().unwrap();
        assert_relative_eq!(last.t_g, 1.0, epsilon = 1e-12);
        assert_relative_eq!(last.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(last.x[1], 0.0, epsilon = 1e-8);
        assert_relative_eq!(last.u[0], -6.0, epsilon = 1e-8);
    }

    #[test]
    fn round_trip_is_identity() {
        let prob = double_integrator_problem(1.0).unwrap();
        let integ = IntegratorConfig::adaptive(1e-10, 1e-12, None);
        let ds = generate(&prob, &di_spec(4, 0.2, 11), &integ).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn identical_seed_gives_identical_bytes() {
        let prob = double_integrator_problem(1.0).unwrap();
        let integ = IntegratorConfig::adaptive(1e-10, 1e-12, None);
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_dataset(&generate(&prob, &di_spec(6, 0.2, 3), &integ).unwrap(), &p1).unwrap();
        write_dataset(&generate(&prob, &di_spec(6, 0.2, 3), &integ).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_record_list_round_trips() {
        let prob = double_integrator_problem(1.0).unwrap();
        let integ = IntegratorConfig::adaptive(1e-10, 1e-12, None);
        let mut ds = generate(&prob, &di_spec(1, 0.25, 7), &integ).unwrap();
        ds.records.clear();
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert!(back.records.is_empty());
        assert_eq!(back.meta, ds.meta);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let prob = double_integrator_problem(1.0).unwrap();
        let integ = IntegratorConfig::adaptive(1e-10, 1e-12, None);
        let ds = generate(&prob, &di_spec(1, 0.5, 7), &integ).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset(&ds, &path).unwrap();

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("not,enough,fields\n");
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, text).unwrap();
        match read_dataset(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
