//! TOML run configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use deal_core::eval::EvalConfig;
use deal_core::model::ModelConfig;
use deal_core::scene::GeneratorConfig;
use deal_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_scenes: 2000,
            test_scenes: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    /// Directory of PNG images addressable by id.
    pub image_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            image_dir: None,
            checkpoint: None,
        }
    }
}

/// Every tunable of a run. `seed` is the master seed and overrides the
/// seeds of the training and evaluation sections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    pub serve: ServeConfig,
}

impl RunConfig {
    /// Reads a config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Propagates the master seed and validates every section.
    pub fn materialize(mut self) -> Result<Self, CliError> {
        self.training.seed = self.seed;
        self.evaluation.seed = self.seed;
        let invalid = |e: deal_core::DealError| CliError::Usage(format!("invalid config: {e}"));
        self.generator.validate().map_err(invalid)?;
        self.model.validate().map_err(invalid)?;
        self.training.validate().map_err(invalid)?;
        if !(0.0..=1.0).contains(&self.evaluation.score_threshold) {
            return Err(CliError::Usage(format!("score_threshold {} outside [0, 1]", self.evaluation.score_threshold)));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

/// Annotation file for a `--data` argument: the file itself, or
/// `annotations.json` inside a directory.
pub fn annotation_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("annotations.json")
    } else {
        data.to_path_buf()
    }
}
