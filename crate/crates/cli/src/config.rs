//! JSON run configuration: strict parsing with field-path error messages,
//! then full validation before any work starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use pairweight::data::Dataset;
use pairweight::trainer::TrainConfig;

use crate::CliError;

/// Zero-shot evaluation settings. When present, the dataset is split into
/// class-disjoint train/test parts and recall snapshots run on the test side.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_fraction")]
    pub train_class_fraction: f64,
    pub split_seed: u64,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_fraction() -> f64 {
    2.0 / 3.0
}

fn default_ks() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parse and validate a config file. Model input width may be omitted in
    /// the file; it is filled in from the dataset by the caller.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            CliError::Config(format!(
                "{} (field `{}`)",
                e.inner(),
                e.path()
            ))
        })?;
        if let Some(eval) = &config.eval {
            if eval.ks.is_empty() {
                return Err(CliError::Config("field `eval.ks`: need at least one K".into()));
            }
        }
        Ok(config)
    }

    /// Fill the model input width from the dataset and run core validation.
    pub fn resolve(&mut self, dataset: &Dataset) -> Result<(), CliError> {
        if self.train.model.input_dim == 0 {
            self.train.model.input_dim = dataset.input_dim();
        }
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}
