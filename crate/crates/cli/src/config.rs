use std::path::Path;

use cbi::simulate::{Record, SimConfig, SummandLaw};
use cbi::{CbiParams, Complex64, InitialState};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One JSON file describing a model and the experiments to run on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Option<CbiParams>,
    #[serde(default)]
    pub x0: Option<InitialState>,
    #[serde(default)]
    pub eigenvalue: Option<EigenSelector>,
    #[serde(default)]
    pub moments: Option<MomentsSection>,
    #[serde(default)]
    pub laplace: Option<LaplaceSection>,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub perpetuity: Option<PerpetuitySection>,
    #[serde(default)]
    pub decompose: Option<DecomposeSection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum EigenSelector {
    /// `[re, im]`
    Value(Complex64),
    /// Position in the eigenvalue list sorted by decreasing real part.
    Index(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    pub t_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceSection {
    pub lambda: Vec<f64>,
    pub t: f64,
    #[serde(default = "default_ode_step")]
    pub ode_step: f64,
}

fn default_ode_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub record: Record,
    #[serde(default)]
    pub log_jumps: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub checks: Vec<String>,
    #[serde(default)]
    pub survivor_threshold: Option<f64>,
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerpetuitySection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: SummandLaw,
    pub n_samples: usize,
    #[serde(default)]
    pub n_terms: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSection {
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub format: Option<String>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub t: Option<f64>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        CliError::Config(format!("{}: at `{at}`: {}", path.display(), e.inner()))
    })
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<&CbiParams, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Config("`model` section missing".into()))
    }

    pub fn x0(&self) -> Result<&InitialState, CliError> {
        self.x0.as_ref().ok_or_else(|| CliError::Config("`x0` missing".into()))
    }

    /// Simulation settings after applying overrides; `default_dt` fills a missing step.
    pub fn sim_config(&self, ov: &Overrides, default_dt: f64) -> Result<SimConfig, CliError> {
        let sec = self.simulation.clone().unwrap_or_default();
        let horizon = ov
            .t
            .or(sec.horizon)
            .ok_or_else(|| CliError::Config("simulation.T missing (or pass --t)".into()))?;
        let n_paths = ov
            .paths
            .or(sec.n_paths)
            .ok_or_else(|| CliError::Config("simulation.n_paths missing (or pass --paths)".into()))?;
        let cfg = SimConfig {
            horizon,
            dt: ov.dt.or(sec.dt).unwrap_or(default_dt),
            n_paths,
            seed: ov.seed.or(sec.seed).unwrap_or(0),
            record: sec.record,
            log_jumps: sec.log_jumps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self, ov: &Overrides) -> u64 {
        ov.seed
            .or(self.simulation.as_ref().and_then(|s| s.seed))
            .unwrap_or(0)
    }
}
