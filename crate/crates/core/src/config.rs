//! Run configuration: one TOML file per run, with a section per pipeline
//! stage. Unknown keys are rejected so typos surface as config errors with
//! field paths.

use crate::dataset::{SamplingMode, SamplingSpec};
use crate::error::Error;
use crate::mlp::TrainConfig;
use crate::ode::{IntegratorConfig, Method};
use crate::problem::Problem;
use crate::problems::{make_plant, make_problem, GliderParams};
use crate::sim::{DispersionSpec, SimConfig};
use crate::Result;
use nalgebra::DVector;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    pub sampling: Option<SamplingSection>,
    pub train: Option<TrainSection>,
    pub sim: Option<SimSection>,
    pub monte_carlo: Option<MonteCarloSection>,
    pub conjugate_scan: Option<ConjugateScanSection>,
    pub verify: Option<VerifySection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sampling(&self) -> Result<&SamplingSection> {
        self.sampling
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sampling] section".into()))
    }

    pub fn train(&self) -> Result<&TrainSection> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::Config("missing [train] section".into()))
    }

    pub fn sim(&self) -> Result<&SimSection> {
        self.sim
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sim] section".into()))
    }

    pub fn monte_carlo(&self) -> Result<&MonteCarloSection> {
        self.monte_carlo
            .as_ref()
            .ok_or_else(|| Error::Config("missing [monte_carlo] section".into()))
    }

    pub fn verify(&self) -> Result<&VerifySection> {
        self.verify
            .as_ref()
            .ok_or_else(|| Error::Config("missing [verify] section".into()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub id: String,
    pub t_f: f64,
    pub mass: Option<f64>,
    pub gravity: Option<f64>,
    pub ref_area: Option<f64>,
    pub cd0: Option<f64>,
    pub km: Option<f64>,
    pub rho: Option<f64>,
}

impl ProblemSection {
    pub fn glider_params(&self) -> GliderParams {
        let d = GliderParams::default();
        GliderParams {
            mass: self.mass.unwrap_or(d.mass),
            gravity: self.gravity.unwrap_or(d.gravity),
            ref_area: self.ref_area.unwrap_or(d.ref_area),
            cd0: self.cd0.unwrap_or(d.cd0),
            km: self.km.unwrap_or(d.km),
            rho: self.rho.unwrap_or(d.rho),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Problem>> {
        make_problem(&self.id, &self.glider_params(), self.t_f)
    }

    pub fn build_plant(&self, overrides: &BTreeMap<String, f64>) -> Result<Arc<dyn Problem>> {
        make_plant(&self.id, &self.glider_params(), self.t_f, overrides)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub method: String,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            method: "rk45_adaptive".into(),
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            step: None,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorSection {
    pub fn build(&self, output_dt: Option<f64>) -> Result<IntegratorConfig> {
        let method = match self.method.as_str() {
            "rk45_adaptive" => Method::Rk45Adaptive { rel_tol: self.rel_tol, abs_tol: self.abs_tol },
            "rk4_fixed" => Method::Rk4Fixed {
                step: self
                    .step
                    .ok_or_else(|| Error::Config("integrator.step: required for rk4_fixed".into()))?,
            },
            other => {
                return Err(Error::Config(format!(
                    "integrator.method: unknown method `{other}`"
                )))
            }
        };
        let cfg = IntegratorConfig { method, max_steps: self.max_steps, output_dt };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n: usize,
    pub dt: f64,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub seed: u64,
    pub free: Vec<[f64; 2]>,
    pub nu: Vec<[f64; 2]>,
}

fn default_mode() -> String {
    "uniform_random".into()
}

impl SamplingSection {
    pub fn build(&self) -> Result<SamplingSpec> {
        let mode = match self.mode.as_str() {
            "uniform_random" => SamplingMode::UniformRandom { seed: self.seed },
            "uniform_grid" => SamplingMode::UniformGrid,
            other => return Err(Error::Config(format!("sampling.mode: unknown mode `{other}`"))),
        };
        Ok(SamplingSpec {
            count: self.n,
            grid_dt: self.dt,
            free_ranges: self.free.iter().map(|r| (r[0], r[1])).collect(),
            nu_ranges: self.nu.iter().map(|r| (r[0], r[1])).collect(),
            mode,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_target_mse")]
    pub target_mse: f64,
    #[serde(default = "default_val_split")]
    pub val_split: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    256
}
fn default_epochs() -> usize {
    2000
}
fn default_target_mse() -> f64 {
    1e-6
}
fn default_val_split() -> f64 {
    0.1
}
fn default_patience() -> usize {
    100
}

impl TrainSection {
    pub fn build(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            max_epochs: self.max_epochs,
            target_mse: self.target_mse,
            val_split: self.val_split,
            seed: self.seed,
            patience: self.patience,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt_guidance: f64,
    pub plant_step: f64,
    pub initial_state: Vec<f64>,
    pub t_g0: f64,
    pub controller: String,
    #[serde(default)]
    pub plant_overrides: BTreeMap<String, f64>,
}

impl SimSection {
    pub fn build(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            guidance_dt: self.dt_guidance,
            plant_step: self.plant_step,
            initial_state: DVector::from_vec(self.initial_state.clone()),
            t_g0: self.t_g0,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub state_ranges: Vec<[f64; 2]>,
    #[serde(default)]
    pub param_ranges: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub write_trajectories: bool,
}

fn default_bins() -> usize {
    20
}

impl MonteCarloSection {
    pub fn dispersion(&self) -> DispersionSpec {
        DispersionSpec {
            state_ranges: self.state_ranges.iter().map(|r| (r[0], r[1])).collect(),
            param_ranges: self
                .param_ranges
                .iter()
                .map(|(k, r)| (k.clone(), (r[0], r[1])))
                .collect(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateScanSection {
    /// Number of terminal samples to trace (defaults to min(5, sampling.n)).
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Relative control tolerance of the re-solve check.
    #[serde(default = "default_verify_tol")]
    pub tolerance: f64,
    #[serde(default = "default_pass_rate")]
    pub min_pass_rate: f64,
}

fn default_fraction() -> f64 {
    0.01
}
fn default_min_count() -> usize {
    20
}
fn default_verify_tol() -> f64 {
    1e-6
}
fn default_pass_rate() -> f64 {
    1.0
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            fraction: default_fraction(),
            min_count: default_min_count(),
            seed: 0,
            tolerance: default_verify_tol(),
            min_pass_rate: default_pass_rate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
            [problem]
            id = "proximity"
            t_f = 1.0

            [sampling]
            n = 100
            dt = 0.01
            seed = 7
            free = [[-0.5, 0.5], [-0.5, 0.5]]
            nu = [[-1.0, 1.0], [-1.0, 1.0]]
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.problem.id, "proximity");
        let spec = cfg.sampling().unwrap().build().unwrap();
        assert_eq!(spec.count, 100);
        assert_eq!(spec.seed(), Some(7));
        let integ = cfg.integrator.build(Some(spec.grid_dt)).unwrap();
        assert_eq!(integ.output_dt, Some(0.01));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
            [problem]
            id = "proximity"
            t_f = 1.0
            not_a_field = 3
        "#;
        let err = toml::from_str::<RunConfig>(text).unwrap_err();
        assert!(err.to_string().contains("not_a_field"));
    }

    #[test]
    fn glider_params_fold_defaults() {
        let text = r#"
            [problem]
            id = "glider"
            t_f = 20.0
            cd0 = 0.15
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let p = cfg.problem.glider_params();
        assert_eq!(p.cd0, 0.15);
        assert_eq!(p.mass, 100.0);
        assert_eq!(p.rho, 1.225);
        assert!(cfg.problem.build().is_ok());
    }

    #[test]
    fn bad_integrator_method_is_a_config_error() {
        let text = r#"
            [problem]
            id = "proximity"
            t_f = 1.0

            [integrator]
            method = "leapfrog"
            rel_tol = 1e-10
            abs_tol = 1e-12
            max_steps = 1000
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.integrator.build(None), Err(Error::Config(_))));
    }
}
