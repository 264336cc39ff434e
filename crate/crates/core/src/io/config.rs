use std::path::Path;

use serde::{Deserialize, Serialize};

use super::read_text;
use crate::error::{Error, Result};
use crate::roadnet::RoadDefaults;
use crate::harness::{BenchmarkConfig, EvaluationConfig, Method, PipelineConfig, RoadVariances};
use crate::tgnn::{GradcheckConfig, ModelConfig, TrainConfig};

/// Which methods to cross-validate and with which seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Holdout folds; all when empty.
    pub holdout: Vec<usize>,
    pub learned_variances: Option<RoadVariances>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let e = EvaluationConfig::default();
        Self {
            methods: e.methods,
            seeds: e.seeds,
            holdout: e.holdout,
            learned_variances: e.learned_variances,
        }
    }
}

/// Every tunable of the command-line tool. Missing keys take their
/// defaults, unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub benchmark: BenchmarkConfig,
    /// Values for road attributes missing from a network file.
    pub roads: RoadDefaults,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationSection,
    pub gradcheck: GradcheckConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn evaluation(&self) -> EvaluationConfig {
        EvaluationConfig {
            methods: self.evaluation.methods.clone(),
            seeds: self.evaluation.seeds.clone(),
            holdout: self.evaluation.holdout.clone(),
            pipeline: self.pipeline,
            model: self.model,
            train: self.train,
            learned_variances: self.evaluation.learned_variances,
        }
    }
}

pub fn read_config(path: &Path) -> Result<Config> {
    Config::parse(&read_text(path)?)
}
