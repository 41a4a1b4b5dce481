//! Losses, optimizer and the co-training loop.

mod adam;
mod loss;
mod trainer;

use thiserror::Error;

use crate::data::DataError;
use crate::quant::QuantError;
use crate::snn::ModelError;
use crate::tensor::TensorError;

pub use adam::{adam_step, lr_schedule, OptimizerState, ParamGrads, BETA1, BETA2, EPSILON};
pub use loss::{ce_loss, kd_loss, match_mse, tna_loss, LossParts, MatchTarget, TnaLossConfig, TrainMode};
pub use trainer::{
    evaluate, EvalReport, Member, MetricsRecord, NoObserver, Seeds, TrainConfig, TrainObserver, TrainOutcome, Trainer,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient in {param} at index {index} (optimizer step {step})")]
    NonFiniteGradient { param: String, index: usize, step: u64 },
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Observer(String),
}
