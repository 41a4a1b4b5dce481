//! Ternary weight compression with delayed activation, first/last layer
//! exemption, and straight-through fine-tuning on full-precision latents.
//!
//! After activation a compressed layer keeps two views of its weights: the
//! latent full-precision copy that the optimizer updates, and the deployed
//! `{-1, 0, +1}` copy the forward pass uses. Gradients computed for the
//! deployed weights are applied unchanged to the latent ones, and the deployed
//! view is recomputed after every optimizer step.

mod pack;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snn::ParamSet;
use crate::tensor::{Element, Tensor};
use crate::training::TrainMode;

pub use pack::{pack_ternary, unpack_ternary, TernaryCode};

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    /// `{-1, 0, +1}` with a symmetric threshold.
    #[default]
    Ternary,
    /// `{-1, +1}` by sign; zero maps to `+1`.
    BinarySign,
}

/// Which weight layers stay at full precision.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemptLayers {
    /// The first weight layer (input encoding) and the last (readout).
    #[default]
    FirstAndLast,
    /// Explicit weight-layer indices.
    Indices(Vec<usize>),
}

impl ExemptLayers {
    pub fn resolve(&self, weight_layers: usize) -> Vec<usize> {
        match self {
            ExemptLayers::FirstAndLast => {
                let mut v = vec![0];
                if weight_layers > 1 {
                    v.push(weight_layers - 1);
                }
                v
            }
            ExemptLayers::Indices(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernaryPolicy {
    pub delta: f64,
    pub start_epoch: usize,
    #[serde(default)]
    pub exempt_layers: ExemptLayers,
    #[serde(default)]
    pub mode: QuantMode,
}

impl Default for TernaryPolicy {
    fn default() -> Self {
        Self {
            delta: 0.1,
            start_epoch: 150,
            exempt_layers: ExemptLayers::FirstAndLast,
            mode: QuantMode::Ternary,
        }
    }
}

impl TernaryPolicy {
    pub fn validate(&self) -> Result<(), QuantError> {
        if self.mode == QuantMode::Ternary && !(self.delta > 0.0) {
            return Err(QuantError::Config(format!("ternary delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }

    fn quantize<T: Element>(&self, w: &[T]) -> Vec<T> {
        match self.mode {
            QuantMode::Ternary => ternarize(w, self.delta),
            QuantMode::BinarySign => binarize_sign(w),
        }
    }
}

/// Symmetric threshold mapping: `-1` below `-delta`, `+1` above `delta`,
/// `0` for `|w| <= delta`.
pub fn ternarize<T: Element>(w: &[T], delta: f64) -> Vec<T> {
    w.iter()
        .map(|&v| {
            let x = v.to_f64_lossy();
            if x > delta {
                T::one()
            } else if x < -delta {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect()
}

pub fn ternarize_tensor<T: Element>(w: &Tensor<T>, delta: f64) -> Tensor<T> {
    Tensor::from_vec(ternarize(w.data(), delta), w.shape().to_vec()).expect("shape preserved")
}

pub fn binarize_sign<T: Element>(w: &[T]) -> Vec<T> {
    w.iter()
        .map(|&v| if v < T::zero() { -T::one() } else { T::one() })
        .collect()
}

/// Latent and deployed weights of one compressed layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedView<T> {
    pub latent: Vec<T>,
    pub deployed: Vec<T>,
}

/// Deployed weights for every compressed layer of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionState<T> {
    pub policy: TernaryPolicy,
    /// `Some(deployed)` for compressed layers, `None` for exempt ones.
    pub deployed: Vec<Option<Vec<T>>>,
}

impl<T: Element> CompressionState<T> {
    pub fn is_compressed(&self, layer: usize) -> bool {
        self.deployed.get(layer).is_some_and(Option::is_some)
    }

    /// Recomputes the deployed view from the latent weights.
    pub fn refresh(&mut self, latent: &ParamSet<T>) {
        for (slot, layer) in self.deployed.iter_mut().zip(&latent.layers) {
            if let Some(d) = slot {
                *d = self.policy.quantize(&layer.weight);
            }
        }
    }

    /// The parameters the forward pass sees: deployed weights where
    /// compressed, latent everywhere else. Biases stay full precision.
    pub fn deployed_params(&self, latent: &ParamSet<T>) -> ParamSet<T> {
        let mut out = latent.clone();
        for (layer, slot) in out.layers.iter_mut().zip(&self.deployed) {
            if let Some(d) = slot {
                layer.weight.clone_from(d);
            }
        }
        out
    }

    pub fn view(&self, latent: &ParamSet<T>, layer: usize) -> Option<QuantizedView<T>> {
        let deployed = self.deployed.get(layer)?.as_ref()?;
        Some(QuantizedView {
            latent: latent.layers[layer].weight.clone(),
            deployed: deployed.clone(),
        })
    }

    /// Fraction of exactly-zero deployed weights per compressed layer.
    pub fn sparsity(&self, latent: &ParamSet<T>) -> BTreeMap<String, f64> {
        self.deployed
            .iter()
            .zip(&latent.layers)
            .filter_map(|(slot, layer)| {
                let d = slot.as_ref()?;
                let zeros = d.iter().filter(|v| **v == T::zero()).count();
                Some((layer.name.clone(), zeros as f64 / d.len() as f64))
            })
            .collect()
    }
}

/// Switches compression on once `epoch >= policy.start_epoch`; returns `None`
/// before that. Exempt layers are never touched.
pub fn activate_compression<T: Element>(
    params: &ParamSet<T>,
    policy: &TernaryPolicy,
    epoch: usize,
) -> Result<Option<CompressionState<T>>, QuantError> {
    policy.validate()?;
    let exempt = policy.exempt_layers.resolve(params.layers.len());
    if let Some(bad) = exempt.iter().find(|&&i| i >= params.layers.len()) {
        return Err(QuantError::Config(format!(
            "exempt layer {bad} does not exist ({} weight layers)",
            params.layers.len()
        )));
    }
    if (0..params.layers.len()).all(|i| exempt.contains(&i)) {
        return Err(QuantError::Config(format!(
            "exempt layers {exempt:?} cover all {} weight layers; nothing to compress",
            params.layers.len()
        )));
    }
    if epoch < policy.start_epoch {
        return Ok(None);
    }
    let deployed = params
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| (!exempt.contains(&i)).then(|| policy.quantize(&l.weight)))
        .collect();
    Ok(Some(CompressionState {
        policy: policy.clone(),
        deployed,
    }))
}

/// Compresses the base network of a co-trained group while the twin keeps
/// full precision. Only valid in `tna` mode.
pub fn tna_ternary_handoff<T: Element>(
    base: &ParamSet<T>,
    twin: &ParamSet<T>,
    policy: &TernaryPolicy,
    mode: TrainMode,
    epoch: usize,
) -> Result<Option<CompressionState<T>>, QuantError> {
    if mode != TrainMode::Tna {
        return Err(QuantError::Config(format!(
            "ternary hand-off needs mode=tna, got mode={}",
            mode.as_str()
        )));
    }
    if base.layers.len() != twin.layers.len() {
        return Err(QuantError::Contract("base and twin have different layer counts".into()));
    }
    activate_compression(base, policy, epoch)
}

/// Per-layer zero fraction of a network's deployed weights. Fails when
/// compression has not been activated.
pub fn sparsity_report<T: Element>(
    latent: &ParamSet<T>,
    state: Option<&CompressionState<T>>,
) -> Result<BTreeMap<String, f64>, QuantError> {
    state
        .map(|s| s.sparsity(latent))
        .ok_or_else(|| QuantError::Contract("sparsity report requested before compression was activated".into()))
}
