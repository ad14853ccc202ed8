use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::AlgoConfig;
use crate::data::DataConfig;
use crate::error::{invalid, Result, SimError};
use crate::latency::LatencyScenario;
use crate::model::ModelConfig;

/// Evaluation cadence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Evaluate every this many server steps; 0 evaluates only the final model.
    pub every_server_steps: u64,
    /// Maximum number of examples taken from each evaluation split.
    pub cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every_server_steps: 10,
            cap: 2048,
        }
    }
}

fn default_budget() -> u64 {
    5000
}

fn default_trials() -> u32 {
    1
}

/// One experiment: data, latency, model, algorithm, and run length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub dataset: DataConfig,
    /// Fixed seed for the dataset; by default each trial's seed is used.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub latency: LatencyScenario,
    #[serde(default)]
    pub model: ModelConfig,
    pub algo: AlgoConfig,
    /// Number of aggregated client updates after which training stops.
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn new(algo: AlgoConfig) -> Self {
        Self {
            name: String::new(),
            dataset: DataConfig::default(),
            data_seed: None,
            latency: LatencyScenario::default(),
            model: ModelConfig::default(),
            algo,
            budget: default_budget(),
            eval: EvalConfig::default(),
            trials: default_trials(),
            seed: 0,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.latency.validate()?;
        self.algo.validate()?;
        if self.budget == 0 {
            return Err(invalid("budget", "must be >= 1"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be >= 1"));
        }
        if self.eval.cap == 0 {
            return Err(invalid("eval.cap", "must be >= 1"));
        }
        if !(self.model.init_scale >= 0.0 && self.model.init_scale.is_finite()) {
            return Err(invalid("model.init_scale", "must be finite and >= 0"));
        }
        if !(self.model.distill.temperature > 0.0) {
            return Err(invalid("model.distill.temperature", "must be > 0"));
        }
        Ok(())
    }

    /// Display name: `name` if set, else the algorithm.
    pub fn label(&self) -> String {
        if self.name.is_empty() {
            self.algo.algorithm.name().to_string()
        } else {
            self.name.clone()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}
