//! Spiking network model: LIF neurons, layer layouts, initialisation and
//! time-unrolled execution.

mod lif;
mod network;
mod params;
mod spec;

use thiserror::Error;

use crate::tensor::TensorError;

pub use lif::{boxcar, boxcar_value, lif_step, LifParams, LifState, SURROGATE_HEIGHT};
pub use network::{forward_timesteps, ForwardOutput, SnnInput};
pub(crate) use network::sum_steps;
pub use params::{kaiming_bound, kaiming_init, LayerParams, LayerTensors, ParamSet};
pub use spec::{BuildOptions, InputShape, LayerSpec, NetworkSpec, CIFARNET};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
