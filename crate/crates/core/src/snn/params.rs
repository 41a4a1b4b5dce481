use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelError, NetworkSpec};
use crate::tensor::{Element, Tape, Tensor};

/// Weights and bias of one weight-carrying layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameters of every weight layer of a [`NetworkSpec`], in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub layers: Vec<LayerParams<T>>,
}

/// Parameters as tensors, possibly registered on a tape.
#[derive(Debug, Clone)]
pub struct LayerTensors<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Half-width of the uniform initialisation for a layer with `fan_in`
/// inputs: `sqrt(1 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Fan-in scaled uniform initialisation, `U(-sqrt(1/fan_in), sqrt(1/fan_in))`
/// for weights and zero biases. Deterministic in `seed`.
pub fn kaiming_init<T: Element>(spec: &NetworkSpec, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .weight_layers()
        .into_iter()
        .enumerate()
        .map(|(k, li)| {
            let layer = &spec.layers[li];
            let shape = layer.weight_shape().expect("weight layer");
            let bound = kaiming_bound(layer.fan_in().expect("weight layer"));
            let len: usize = shape.iter().product();
            let weight = (0..len)
                .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
                .collect();
            LayerParams {
                name: format!("layer{k}"),
                weight_shape: shape,
                weight,
                bias: vec![T::zero(); layer.bias_len().expect("weight layer")],
            }
        })
        .collect();
    ParamSet { layers }
}

impl<T: Element> ParamSet<T> {
    /// Checks that the parameter shapes fit `spec`.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<(), ModelError> {
        let weight_layers = spec.weight_layers();
        if weight_layers.len() != self.layers.len() {
            return Err(ModelError::Config(format!(
                "network has {} weight layers but {} parameter entries were given",
                weight_layers.len(),
                self.layers.len()
            )));
        }
        for (p, &li) in self.layers.iter().zip(&weight_layers) {
            let layer = &spec.layers[li];
            let expected = layer.weight_shape().expect("weight layer");
            if p.weight_shape != expected || p.weight.len() != expected.iter().product::<usize>() {
                return Err(ModelError::Config(format!(
                    "{}: weight shape {:?} does not match layer shape {expected:?}",
                    p.name, p.weight_shape
                )));
            }
            if p.bias.len() != layer.bias_len().expect("weight layer") {
                return Err(ModelError::Config(format!("{}: bias length {} is wrong", p.name, p.bias.len())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Converts to tensors; with a tape, every tensor becomes a leaf.
    pub fn to_tensors(&self, tape: Option<&Tape<T>>) -> Vec<LayerTensors<T>> {
        self.layers
            .iter()
            .map(|l| {
                let weight = Tensor::from_vec(l.weight.clone(), l.weight_shape.clone()).expect("consistent weight shape");
                let bias = Tensor::from_vec(l.bias.clone(), vec![l.bias.len()]).expect("non-empty bias");
                match tape {
                    Some(tape) => LayerTensors {
                        weight: tape.leaf(&weight),
                        bias: tape.leaf(&bias),
                    },
                    None => LayerTensors { weight, bias },
                }
            })
            .collect()
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    weight_shape: l.weight_shape.clone(),
                    weight: l.weight.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                    bias: l.bias.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }
}
