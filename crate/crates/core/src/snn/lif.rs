//! Leaky integrate-and-fire dynamics with a boxcar surrogate derivative.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{custom_grad, Element, Tensor};

/// Height of the boxcar surrogate inside its window.
pub const SURROGATE_HEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane decay per timestep.
    pub alpha: f64,
    /// Firing threshold.
    pub theta: f64,
    /// Half-width of the surrogate window around the threshold.
    pub surrogate_width: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            theta: 1.0,
            surrogate_width: 0.5,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::Config(format!("lif alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.theta > 0.0) {
            return Err(ModelError::Config(format!("lif theta must be positive, got {}", self.theta)));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(ModelError::Config(format!(
                "surrogate width must be positive, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }
}

/// Surrogate derivative of the spike w.r.t. the membrane potential, as a
/// function of the distance to threshold. The window boundary is inclusive.
pub fn boxcar_value(u_minus_theta: f64, width: f64) -> f64 {
    if u_minus_theta.abs() <= width {
        SURROGATE_HEIGHT
    } else {
        0.0
    }
}

/// Elementwise [`boxcar_value`] over a tensor. The result is a constant.
pub fn boxcar<T: Element>(u_minus_theta: &Tensor<T>, width: f64) -> Tensor<T> {
    let data = u_minus_theta
        .data()
        .iter()
        .map(|&v| T::from_f64_lossy(boxcar_value(v.to_f64_lossy(), width)))
        .collect();
    Tensor::from_vec(data, u_minus_theta.shape().to_vec()).expect("shape preserved")
}

/// Membrane potentials and the spikes emitted at the previous timestep.
#[derive(Debug, Clone)]
pub struct LifState<T: Element> {
    pub u: Tensor<T>,
    pub s_prev: Tensor<T>,
}

impl<T: Element> LifState<T> {
    /// Resting state: zero potential, no spikes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            u: Tensor::zeros(shape),
            s_prev: Tensor::zeros(shape),
        }
    }
}

/// Advances one timestep:
/// `u[t] = alpha·u[t-1]·(1 - s[t-1]) + I[t]`, `s[t] = u[t] >= theta`.
///
/// The spike's forward value is the exact Heaviside step; its backward
/// derivative is the boxcar surrogate. Gradients also flow through the reset
/// term.
pub fn lif_step<T: Element>(
    state: &LifState<T>,
    input_current: &Tensor<T>,
    params: &LifParams,
) -> Result<(LifState<T>, Tensor<T>), ModelError> {
    if state.u.shape() != input_current.shape() || state.s_prev.shape() != input_current.shape() {
        return Err(ModelError::Tensor(crate::tensor::TensorError::Shape {
            op: "lif_step",
            lhs: state.u.shape().to_vec(),
            rhs: input_current.shape().to_vec(),
        }));
    }
    if let Some(bad) = state.s_prev.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(ModelError::Contract(format!("previous spikes must be 0 or 1, found {bad}")));
    }
    let alpha = T::from_f64_lossy(params.alpha);
    let theta = T::from_f64_lossy(params.theta);

    let keep = state.s_prev.neg()?.add_scalar(T::one())?;
    let u = state.u.mul(&keep)?.scale(alpha)?.add(input_current)?;
    let distance = u.add_scalar(-theta)?;
    let fired: Vec<T> = u
        .data()
        .iter()
        .map(|&v| if v >= theta { T::one() } else { T::zero() })
        .collect();
    let heaviside = Tensor::from_vec(fired, u.shape().to_vec())?;
    let width = params.surrogate_width;
    let spikes = custom_grad(&heaviside, &distance, move |d| {
        T::from_f64_lossy(boxcar_value(d.to_f64_lossy(), width))
    })?;
    if u.data().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Contract("membrane potential became non-finite".into()));
    }
    Ok((
        LifState {
            u,
            s_prev: spikes.clone(),
        },
        spikes,
    ))
}
