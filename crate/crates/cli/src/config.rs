use std::path::{Path, PathBuf};

use abcr::baselines::{MhConfig, PriorSpec};
use abcr::harness::{AbcrSettings, SensitivityConfig, SimStudyConfig};
use abcr::lmm::{SyntheticSpec, ValueTransform, VarianceCorrection};
use abcr::toy::ContaminationSpec;
use abcr::TuningConstants;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Toy,
    Lmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Response to fit from a long-format file.
    pub response: Option<String>,
    /// Adds the gender dummy and its interactions with treatment.
    pub interaction: bool,
    pub transform: ValueTransform,
    pub correction: VarianceCorrection,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Toy,
            response: None,
            interaction: false,
            transform: ValueTransform::Identity,
            correction: VarianceCorrection::Reml,
        }
    }
}

/// Parameters of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    /// Sample size (toy) or number of groups (one-way LMM).
    pub n: usize,
    /// Toy location and scale.
    pub mu: f64,
    pub sigma: f64,
    /// LMM levels per group, fixed effects and variance components.
    pub q: usize,
    pub alpha: Vec<f64>,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self { n: 30, mu: 0.0, sigma: 1.0, q: 3, alpha: vec![0.0; 3], sigma1_sq: 1.0, sigma2_sq: 1.0 }
    }
}

fn default_mcmc() -> MhConfig {
    MhConfig::new(50_000, 10_000)
}

/// Everything a run depends on. The copy written to the output directory
/// reproduces the run when passed back with `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub tuning: TuningConstants,
    /// Defaults to the model's standard prior.
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub abcr: AbcrSettings,
    /// Adds a full-likelihood MCMC fit to `fit`.
    #[serde(default)]
    pub baseline_mcmc: bool,
    #[serde(default = "default_mcmc")]
    pub mcmc: MhConfig,
    #[serde(default = "ContaminationSpec::none")]
    pub contamination: ContaminationSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub simstudy: SimStudyConfig,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

fn default_seed() -> u64 {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn prior_for(&self, dim: usize, q: usize) -> Result<PriorSpec, CliError> {
        let prior = match &self.prior {
            Some(p) => p.clone(),
            None if self.model.kind == ModelKind::Toy => PriorSpec::toy_default(),
            None => PriorSpec::lmm_default(q),
        };
        prior.check_dim(dim).map_err(|e| CliError::config(e.to_string()))?;
        Ok(prior)
    }
}
