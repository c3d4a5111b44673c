//! Concrete problem instances: planar gliding vehicle, spacecraft proximity,
//! and a double-integrator benchmark with a closed-form solution.

mod double_integrator;
mod glider;
mod proximity;

pub use double_integrator::{double_integrator_problem, DoubleIntegratorProblem};
pub use glider::{glider_problem, GliderParams, GliderProblem};
pub use proximity::{proximity_problem, ProximityProblem};

use crate::error::Error;
use crate::problem::Problem;
use crate::Result;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Builds a problem by id. `params` are only consulted for the glider.
pub fn make_problem(id: &str, params: &GliderParams, t_f: f64) -> Result<Arc<dyn Problem>> {
    match id {
        "glider" => Ok(Arc::new(glider_problem(params.clone(), t_f)?)),
        "proximity" => Ok(Arc::new(proximity_problem(t_f)?)),
        "double_integrator" => Ok(Arc::new(double_integrator_problem(t_f)?)),
        other => Err(Error::Config(format!("problem.id: unknown problem `{other}`"))),
    }
}

/// Builds a plant-side problem with parameter overrides applied (used by the
/// simulator to fly a perturbed vehicle against a nominal controller).
pub fn make_plant(
    id: &str,
    params: &GliderParams,
    t_f: f64,
    overrides: &BTreeMap<String, f64>,
) -> Result<Arc<dyn Problem>> {
    if overrides.is_empty() {
        return make_problem(id, params, t_f);
    }
    match id {
        "glider" => {
            let mut p = params.clone();
            for (key, &value) in overrides {
                match key.as_str() {
                    "mass" => p.mass = value,
                    "gravity" => p.gravity = value,
                    "ref_area" => p.ref_area = value,
                    "cd0" => p.cd0 = value,
                    "km" => p.km = value,
                    "rho" => p.rho = value,
                    other => {
                        return Err(Error::Config(format!(
                            "plant_overrides.{other}: unknown glider parameter"
                        )))
                    }
                }
            }
            Ok(Arc::new(glider_problem(p, t_f)?))
        }
        other => Err(Error::Config(format!(
            "plant_overrides: problem `{other}` has no tunable parameters"
        ))),
    }
}
