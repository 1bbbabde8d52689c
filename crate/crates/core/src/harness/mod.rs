//! Training, evaluation, cross-validation, prediction and the file-level
//! commands behind the command-line tool.

mod commands;
mod data;
mod evaluate;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DataError;
use crate::featurepack::{MissingPolicy, PackError};
use crate::loss::LossConfig;
use crate::metrics::MetricError;
use crate::model::{CheckpointError, ModelConfig, ModelError};
use crate::optim::{AdamConfig, OptimError, PlateauConfig};
use crate::par::Execution;
use crate::tensor::TensorError;

pub use commands::{generate, ingest_cleaned, write_curves, write_json, StatsReport};
pub use commands::{run_stats, IngestOutcome};
pub use data::{Prepared, Split};
pub use evaluate::{cross_validate, evaluate, evaluate_rows, predict, predict_rows, write_predictions, CvSummary};
pub use train::{batch_gradient, train, EpochLog, TrainOutcome, TrainingLog};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("feature dimension mismatch: {0}")]
    Dims(String),
    #[error("numerical failure at epoch {epoch}: {reason}; batch ids: {ids:?}")]
    Numerical { epoch: usize, reason: String, ids: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HarnessError {
    /// Process exit status: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Data(DataError::Config(_)) => 1,
            HarnessError::Model(ModelError::Config(_)) => 1,
            HarnessError::Numerical { .. } | HarnessError::Optim(OptimError::Divergence(_)) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Line-delimited JSON records.
    pub records: PathBuf,
    /// Directory of feature packs.
    pub packs: PathBuf,
    pub missing_features: MissingPolicy,
    /// Apply the 3σ outlier filter after ingestion.
    pub clean_outliers: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            records: PathBuf::from("records.jsonl"),
            packs: PathBuf::from("packs"),
            missing_features: MissingPolicy::ZeroFill,
            clean_outliers: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    /// Share of each training set held out for validation; 0 validates on
    /// the training set itself.
    pub val_fraction: f64,
    /// Samples per independent forward/backward unit inside a batch.
    pub chunk_size: usize,
    pub execution: Execution,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: AdamConfig,
    pub plateau: PlateauConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 100,
            batch_size: 64,
            folds: 5,
            val_fraction: 0.1,
            chunk_size: 16,
            execution: Execution::default(),
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: AdamConfig::default(),
            plateau: PlateauConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            for p in [&mut config.data.records, &mut config.data.packs] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Switches early-popularity input on or off, keeping `steps` consistent.
    pub fn set_ep_mode(&mut self, ep: bool) {
        self.model.ep_mode = ep;
        self.model.steps = ModelConfig::horizon_steps(ep);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate()?;
        self.model.validate_horizon()?;
        if self.epochs == 0 {
            return Err(HarnessError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.chunk_size == 0 {
            return Err(HarnessError::Config("batch_size and chunk_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(HarnessError::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.folds < 2 {
            return Err(HarnessError::Config("folds must be at least 2".into()));
        }
        Ok(())
    }

    /// Checks that the configured input files exist.
    pub fn validate_paths(&self) -> Result<(), HarnessError> {
        if !self.data.records.is_file() {
            return Err(HarnessError::Config(format!(
                "records file {} does not exist",
                self.data.records.display()
            )));
        }
        if !self.data.packs.is_dir() {
            return Err(HarnessError::Config(format!(
                "feature pack directory {} does not exist",
                self.data.packs.display()
            )));
        }
        Ok(())
    }
}
