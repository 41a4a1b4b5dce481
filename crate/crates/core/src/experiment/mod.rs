//! Configuration, checkpoints and the train/eval/sweep runners.

mod checkpoint;
mod config;
mod run;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::quant::QuantError;
use crate::training::TrainError;

pub use checkpoint::{Checkpoint, CheckpointMeta, Dtype, Entry, OptimizerBlob, FORMAT_VERSION, MAGIC};
pub use config::{DataSection, DatasetKind, ExperimentConfig, ModelSection, SeedSection, TernarySection, TrainSection};
pub use run::{
    alpha_dir_name, inspect_checkpoint, load_split, metrics_header, run_eval, run_sweep, run_train, EvalOutput,
    RunOptions, SweepChild, TrainSummary, DEFAULT_SWEEP_ALPHAS,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
