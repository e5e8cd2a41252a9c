use std::path::Path;

use serde::{Deserialize, Serialize};

use super::linear_gaussian::{LinearGaussianScenario, ScenarioDef};
use crate::error::{Error, Result};

/// On-disk scenario description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: ModelSection,
    #[serde(default)]
    pub prior_data: Option<PriorDataSection>,
    pub design: DesignSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    pub degree: usize,
    pub sigma2: f64,
    #[serde(default)]
    pub theta0: Vec<f64>,
    pub prior_points: Vec<f64>,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDataSection {
    pub xi: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub n: usize,
    #[serde(default = "default_lower")]
    pub lower: f64,
    #[serde(default = "default_upper")]
    pub upper: f64,
}

fn default_ridge() -> f64 {
    1e-4
}

fn default_lower() -> f64 {
    -1.0
}

fn default_upper() -> f64 {
    1.0
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn build(&self) -> Result<LinearGaussianScenario> {
        if self.model.kind != "linear-gaussian" {
            return Err(Error::config(format!(
                "unknown model kind {:?}, expected \"linear-gaussian\"",
                self.model.kind
            )));
        }
        let (prior_xi, prior_y) = match &self.prior_data {
            Some(p) => (p.xi.clone(), p.y.clone()),
            None => (Vec::new(), Vec::new()),
        };
        LinearGaussianScenario::from_def(ScenarioDef {
            degree: self.model.degree,
            sigma2: self.model.sigma2,
            theta0: self.model.theta0.clone(),
            prior_points: self.model.prior_points.clone(),
            ridge: self.model.ridge,
            prior_xi,
            prior_y,
            n_trials: self.design.n,
            lower: self.design.lower,
            upper: self.design.upper,
        })
    }
}

/// Names accepted by [`builtin_scenario`].
pub const BUILTIN_SCENARIOS: [&str; 2] = ["s1-quadratic", "s2-quadratic"];

/// Built-in quadratic regression scenarios.
///
/// `s1-quadratic` allocates one future trial on [-1, 1] after observing
/// y = 40 at xi = -1 under a prior informed at the single point 0. Its
/// expected utility is maximized at d = 1.
///
/// `s2-quadratic` allocates two future trials after observing y = (-1, 160)
/// at xi = (-1, 1) under a prior informed at -1 and 0. Its expected utility
/// is maximized on the pair {0, 1}, in either order.
pub fn builtin_scenario(name: &str) -> Result<LinearGaussianScenario> {
    let def = match name {
        "s1-quadratic" => ScenarioDef {
            degree: 2,
            sigma2: 2.0,
            theta0: Vec::new(),
            prior_points: vec![0.0],
            ridge: 1e-4,
            prior_xi: vec![-1.0],
            prior_y: vec![40.0],
            n_trials: 1,
            lower: -1.0,
            upper: 1.0,
        },
        "s2-quadratic" => ScenarioDef {
            degree: 2,
            sigma2: 2.0,
            theta0: Vec::new(),
            prior_points: vec![-1.0, 0.0],
            ridge: 1e-4,
            prior_xi: vec![-1.0, 1.0],
            prior_y: vec![-1.0, 160.0],
            n_trials: 2,
            lower: -1.0,
            upper: 1.0,
        },
        other => {
            return Err(Error::config(format!(
                "unknown scenario {other:?}, expected one of {BUILTIN_SCENARIOS:?} or a file path"
            )))
        }
    };
    LinearGaussianScenario::from_def(def)
}
