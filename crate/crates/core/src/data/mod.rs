//! Dataset ingestion, augmentation and batching.

mod augment;
mod cifar;
mod idx;
mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snn::{InputShape, SnnInput};
use crate::tensor::Tensor;

pub use augment::{augment, crop_flip, AugmentConfig};
pub use cifar::{load_cifar_binary, write_cifar_binary, CifarVariant};
pub use idx::{load_idx, write_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use synthetic::{rate_map, synthetic_spikes, BACKGROUND_RATE, CLASS_RATE};

pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: format error: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("data configuration error: {0}")]
    Config(String),
}

impl DataError {
    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        DataError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    std::fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_byte(p: f32) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Samples stored back to back. Static images hold `C·H·W` unit-scaled
/// values each; spike trains hold `T·C·H·W` binary values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub shape: InputShape,
    /// Frames per sample for spike trains, `None` for static images.
    pub timesteps: Option<usize>,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        name: &str,
        split: Split,
        shape: InputShape,
        timesteps: Option<usize>,
        data: Vec<f32>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, DataError> {
        let ds = Self {
            name: name.to_string(),
            split,
            shape,
            timesteps,
            data,
            labels,
            classes,
        };
        if ds.data.len() != ds.sample_len() * ds.labels.len() {
            return Err(DataError::Config(format!(
                "{} values for {} samples of {}",
                ds.data.len(),
                ds.labels.len(),
                ds.sample_len()
            )));
        }
        if let Some(&bad) = ds.labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Config(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.shape.len() * self.timesteps.unwrap_or(1)
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            shape: self.shape,
            timesteps: self.timesteps,
            data: indices.iter().flat_map(|&i| self.sample(i).iter().copied()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Per-channel `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn cifar() -> Self {
        Self {
            mean: CIFAR_MEAN.to_vec(),
            std: CIFAR_STD.to_vec(),
        }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Channel statistics of a static-image dataset.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let InputShape { channels, height, width } = ds.shape;
        let plane = height * width;
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        for chunk in ds.data.chunks(plane).enumerate() {
            let c = chunk.0 % channels;
            for &v in chunk.1 {
                sum[c] += f64::from(v);
                sq[c] += f64::from(v) * f64::from(v);
            }
        }
        let count = (ds.data.len() / channels) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / count - m * m).max(0.0).sqrt().max(1e-6)) as f32)
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn apply(&self, img: &mut [f32], shape: InputShape) {
        let plane = shape.height * shape.width;
        for (c, chunk) in img.chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub input: SnnInput<f32>,
    pub labels: Vec<usize>,
}

/// Assembles a batch. Static images are augmented when `augment` is given and
/// then normalized; spike trains are passed through unchanged as one frame
/// tensor per timestep.
pub fn make_batch<R: Rng>(
    ds: &Dataset,
    indices: &[usize],
    norm: &Normalization,
    augment_with: Option<(&AugmentConfig, &mut R)>,
) -> Batch {
    let labels = indices.iter().map(|&i| ds.labels[i]).collect();
    let n = indices.len();
    let [c, h, w] = ds.shape.dims();
    let input = match ds.timesteps {
        None => {
            let mut data = Vec::with_capacity(n * ds.shape.len());
            let mut augment_with = augment_with;
            for &i in indices {
                let mut img = match augment_with.as_mut() {
                    Some((cfg, rng)) => augment(ds.sample(i), ds.shape, cfg, *rng),
                    None => ds.sample(i).to_vec(),
                };
                norm.apply(&mut img, ds.shape);
                data.extend(img);
            }
            SnnInput::Static(Tensor::from_vec(data, vec![n, c, h, w]).expect("batch shape"))
        }
        Some(t) => {
            let frame = ds.shape.len();
            let frames = (0..t)
                .map(|step| {
                    let data = indices
                        .iter()
                        .flat_map(|&i| ds.sample(i)[step * frame..(step + 1) * frame].iter().copied())
                        .collect();
                    Tensor::from_vec(data, vec![n, c, h, w]).expect("frame shape")
                })
                .collect();
            SnnInput::Temporal(frames)
        }
    };
    Batch { input, labels }
}

/// Index batches covering `0..n` once, shuffled by a generator derived from
/// `(seed, epoch)`. The last batch may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// In-order index batches, for evaluation.
pub fn sequential_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Carves `round(fraction · n)` samples out as a validation set by seeded
/// shuffle. Returns `(train, validation)`.
pub fn split_validation(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(DataError::Config(format!("validation fraction must lie in [0, 1), got {fraction}")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (fraction * ds.len() as f64).round() as usize;
    let (val, train) = order.split_at(n_val);
    let (mut train, mut val) = (train.to_vec(), val.to_vec());
    train.sort_unstable();
    val.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}
