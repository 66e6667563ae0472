//! Effective run configuration: defaults, then the JSON file, then flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sfnet::backbone::ModelConfig;
use sfnet::data::SynthSpec;
use sfnet::train::TrainConfig;
use sfnet::Precision;

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub train_fraction: f64,
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            precision: Precision::Standard,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Propagates the global seed and precision into every section.
    pub fn sync(&mut self) {
        self.synth.seed = self.seed;
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.model.precision = self.precision;
        self.train.precision = self.precision;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable config")
    }
}
