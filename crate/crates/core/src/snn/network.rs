use rand::Rng;

use super::lif::{lif_step, LifState};
use super::params::LayerTensors;
use super::{LayerSpec, ModelError, NetworkSpec};
use crate::tensor::{Element, Tensor};

/// Network input for one batch.
#[derive(Debug, Clone)]
pub enum SnnInput<T: Element> {
    /// `N×C×H×W` image batch presented as constant current at every timestep.
    Static(Tensor<T>),
    /// One `N×C×H×W` spike frame per timestep.
    Temporal(Vec<Tensor<T>>),
}

impl<T: Element> SnnInput<T> {
    pub fn batch_size(&self) -> usize {
        match self {
            SnnInput::Static(x) => x.shape()[0],
            SnnInput::Temporal(frames) => frames.first().map_or(0, |f| f.shape()[0]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Element> {
    /// Output accumulator contribution per timestep, each `N×classes`.
    pub logits: Vec<Tensor<T>>,
    /// Total spikes per LIF layer, summed over batch and timesteps.
    pub spike_counts: Vec<f64>,
}

impl<T: Element> ForwardOutput<T> {
    /// Timestep-summed logits.
    pub fn summed_logits(&self) -> Result<Tensor<T>, ModelError> {
        sum_steps(&self.logits)
    }
}

pub(crate) fn sum_steps<T: Element>(steps: &[Tensor<T>]) -> Result<Tensor<T>, ModelError> {
    let (first, rest) = steps
        .split_first()
        .ok_or_else(|| ModelError::Contract("no timesteps to sum".into()))?;
    rest.iter().try_fold(first.clone(), |acc, t| Ok(acc.add(t)?))
}

struct Runner<'a, T: Element, R: Rng> {
    spec: &'a NetworkSpec,
    params: &'a [LayerTensors<T>],
    /// Index into `params` for each entry of `spec.layers`.
    param_index: Vec<Option<usize>>,
    states: Vec<Option<LifState<T>>>,
    masks: Vec<Option<Tensor<T>>>,
    spike_counts: Vec<f64>,
    lif_slot: Vec<Option<usize>>,
    train: bool,
    rng: &'a mut R,
}

impl<T: Element, R: Rng> Runner<'_, T, R> {
    fn apply(&mut self, li: usize, x: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        match &self.spec.layers[li] {
            LayerSpec::Conv3x3 { .. } => {
                let p = &self.params[self.param_index[li].expect("weight layer")];
                Ok(x.conv2d(&p.weight)?.add_bias(&p.bias, 1)?)
            }
            LayerSpec::AvgPool2 => Ok(x.avgpool2()?),
            LayerSpec::FullyConnected { .. } | LayerSpec::OutputAccumulator { .. } => {
                let p = &self.params[self.param_index[li].expect("weight layer")];
                Ok(x.flatten()?.matmul(&p.weight)?.add_bias(&p.bias, 1)?)
            }
            LayerSpec::Dropout { p } => {
                if !self.train || *p == 0.0 {
                    return Ok(x);
                }
                if self.masks[li].is_none() {
                    // one mask per forward call, shared by every timestep
                    let keep = 1.0 - p;
                    let scale = T::from_f64_lossy(1.0 / keep);
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if self.rng.gen::<f64>() < keep { scale } else { T::zero() })
                        .collect();
                    self.masks[li] = Some(Tensor::from_vec(mask, x.shape().to_vec())?);
                }
                Ok(x.mul(self.masks[li].as_ref().expect("mask sampled"))?)
            }
            LayerSpec::Lif(params) => {
                let state = self.states[li].take().unwrap_or_else(|| LifState::zeros(x.shape()));
                let (next, spikes) = lif_step(&state, &x, params)?;
                self.states[li] = Some(next);
                let fired: f64 = spikes.data().iter().map(|v| v.to_f64_lossy()).sum();
                self.spike_counts[self.lif_slot[li].expect("lif layer")] += fired;
                Ok(spikes)
            }
        }
    }

    fn run(&mut self, range: std::ops::Range<usize>, mut x: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        for li in range {
            x = self.apply(li, x)?;
        }
        Ok(x)
    }
}

fn check_params<T: Element>(spec: &NetworkSpec, params: &[LayerTensors<T>]) -> Result<Vec<Option<usize>>, ModelError> {
    let weight_layers = spec.weight_layers();
    if weight_layers.len() != params.len() {
        return Err(ModelError::Config(format!(
            "network has {} weight layers but {} parameter tensors were given",
            weight_layers.len(),
            params.len()
        )));
    }
    let mut index = vec![None; spec.layers.len()];
    for (k, &li) in weight_layers.iter().enumerate() {
        let layer = &spec.layers[li];
        let expected = layer.weight_shape().expect("weight layer");
        if params[k].weight.shape() != expected.as_slice() || params[k].bias.shape() != [layer.bias_len().expect("weight layer")] {
            return Err(ModelError::Config(format!(
                "parameters of weight layer {k} have shape {:?}/{:?}, layer expects {expected:?}",
                params[k].weight.shape(),
                params[k].bias.shape()
            )));
        }
        index[li] = Some(k);
    }
    Ok(index)
}

/// Runs the network for `spec.timesteps` steps and returns the output
/// accumulator contribution of every step.
///
/// Every LIF state starts at rest. Static input is encoded as constant
/// current: the layers before the first LIF layer are evaluated once and their
/// output is fed at every step. Dropout (only when `train` is set) samples one
/// mask per layer per call.
pub fn forward_timesteps<T: Element, R: Rng>(
    spec: &NetworkSpec,
    params: &[LayerTensors<T>],
    input: &SnnInput<T>,
    train: bool,
    rng: &mut R,
) -> Result<ForwardOutput<T>, ModelError> {
    let param_index = check_params(spec, params)?;
    let expect_frame = |x: &Tensor<T>| -> Result<(), ModelError> {
        if x.ndim() != 4 || x.shape()[1..] != spec.input.dims() {
            return Err(ModelError::Config(format!(
                "input of shape {:?} does not match network input {:?}",
                x.shape(),
                spec.input.dims()
            )));
        }
        Ok(())
    };
    let mut lif_slot = vec![None; spec.layers.len()];
    for (slot, li) in spec.lif_layers().into_iter().enumerate() {
        lif_slot[li] = Some(slot);
    }
    let lif_count = spec.lif_layers().len();
    let mut runner = Runner {
        spec,
        params,
        param_index,
        states: vec![None; spec.layers.len()],
        masks: vec![None; spec.layers.len()],
        spike_counts: vec![0.0; lif_count],
        lif_slot,
        train,
        rng,
    };
    let n_layers = spec.layers.len();
    let mut logits = Vec::with_capacity(spec.timesteps);
    match input {
        SnnInput::Static(x) => {
            expect_frame(x)?;
            let first_lif = spec.lif_layers().first().copied().unwrap_or(n_layers);
            let encoded = runner.run(0..first_lif, x.clone())?;
            for _ in 0..spec.timesteps {
                logits.push(runner.run(first_lif..n_layers, encoded.clone())?);
            }
        }
        SnnInput::Temporal(frames) => {
            if frames.len() != spec.timesteps {
                return Err(ModelError::Config(format!(
                    "temporal input has {} frames but the network runs {} timesteps",
                    frames.len(),
                    spec.timesteps
                )));
            }
            for frame in frames {
                expect_frame(frame)?;
                logits.push(runner.run(0..n_layers, frame.clone())?);
            }
        }
    }
    Ok(ForwardOutput {
        logits,
        spike_counts: runner.spike_counts,
    })
}
