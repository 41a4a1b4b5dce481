use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::snn::{LayerTensors, ParamSet};
use crate::tensor::{Element, Gradients};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Gradients laid out like a [`ParamSet`]: `(weight, bias)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Element> ParamGrads<T> {
    /// Collects the gradient of every parameter leaf; parameters the loss
    /// does not reach get zeros.
    pub fn collect(grads: &Gradients<T>, leaves: &[LayerTensors<T>]) -> Self {
        Self {
            layers: leaves
                .iter()
                .map(|l| (grads.get_or_zeros(&l.weight).to_vec(), grads.get_or_zeros(&l.bias).to_vec()))
                .collect(),
        }
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState<T> {
    /// `(weight, bias)` first moments per layer.
    pub first_moment: Vec<(Vec<T>, Vec<T>)>,
    pub second_moment: Vec<(Vec<T>, Vec<T>)>,
    pub step_count: u64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]))
                .collect::<Vec<_>>()
        };
        Self {
            first_moment: zeros(),
            second_moment: zeros(),
            step_count: 0,
            lr,
            betas: (BETA1, BETA2),
            epsilon: EPSILON,
        }
    }
}

fn check_finite<T: Element>(name: &str, values: &[T], step: u64) -> Result<(), TrainError> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteGradient {
            param: name.to_string(),
            index: pos,
            step,
        });
    }
    Ok(())
}

fn update<T: Element>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], lr: f64, state_betas: (f64, f64), eps: f64, step: u64) {
    let (b1, b2) = state_betas;
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    for i in 0..p.len() {
        let gi = g[i].to_f64_lossy();
        let mi = b1 * m[i].to_f64_lossy() + (1.0 - b1) * gi;
        let vi = b2 * v[i].to_f64_lossy() + (1.0 - b2) * gi * gi;
        m[i] = T::from_f64_lossy(mi);
        v[i] = T::from_f64_lossy(vi);
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        let delta = lr * m_hat / (v_hat.sqrt() + eps);
        p[i] = T::from_f64_lossy(p[i].to_f64_lossy() - delta);
    }
}

/// One bias-corrected Adam update at `state.lr`. Nothing is modified when a
/// gradient is non-finite.
pub fn adam_step<T: Element>(
    params: &mut ParamSet<T>,
    grads: &ParamGrads<T>,
    state: &mut OptimizerState<T>,
) -> Result<(), TrainError> {
    if grads.layers.len() != params.layers.len() || state.first_moment.len() != params.layers.len() {
        return Err(TrainError::Contract("gradient/optimizer layout does not match parameters".into()));
    }
    for (layer, (gw, gb)) in params.layers.iter().zip(&grads.layers) {
        if gw.len() != layer.weight.len() || gb.len() != layer.bias.len() {
            return Err(TrainError::Contract(format!("{}: gradient shape does not match", layer.name)));
        }
        check_finite(&format!("{}.weight", layer.name), gw, state.step_count + 1)?;
        check_finite(&format!("{}.bias", layer.name), gb, state.step_count + 1)?;
    }
    state.step_count += 1;
    let step = state.step_count;
    for (k, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[k];
        let (mw, mb) = &mut state.first_moment[k];
        let (vw, vb) = &mut state.second_moment[k];
        update(&mut layer.weight, gw, mw, vw, state.lr, state.betas, state.epsilon, step);
        update(&mut layer.bias, gb, mb, vb, state.lr, state.betas, state.epsilon, step);
    }
    Ok(())
}

/// Exponential decay applied once per epoch: `initial_lr · gamma^epoch`.
pub fn lr_schedule(epoch: usize, initial_lr: f64, gamma: f64) -> f64 {
    initial_lr * gamma.powi(epoch as i32)
}
