use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Split};
use crate::snn::InputShape;

pub const BACKGROUND_RATE: f64 = 0.1;
pub const CLASS_RATE: f64 = 0.6;

/// Per-pixel firing probability for `class`: pixels whose flat index is
/// congruent to the class modulo `classes` fire at [`CLASS_RATE`], the rest at
/// [`BACKGROUND_RATE`]. Total spikes per region therefore separate the classes.
pub fn rate_map(classes: usize, shape: InputShape, class: usize) -> Vec<f64> {
    (0..shape.len())
        .map(|i| if i % classes == class { CLASS_RATE } else { BACKGROUND_RATE })
        .collect()
}

/// `n` binary spike trains of `timesteps` frames. Labels cycle through the
/// classes; each frame draws independent Bernoulli spikes from the class rate
/// map.
pub fn synthetic_spikes(classes: usize, timesteps: usize, shape: InputShape, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::Config(format!("synthetic spikes need at least 2 classes, got {classes}")));
    }
    if timesteps == 0 || n == 0 || shape.is_empty() {
        return Err(DataError::Config("synthetic spikes need positive timesteps, samples and shape".into()));
    }
    let maps: Vec<Vec<f64>> = (0..classes).map(|c| rate_map(classes, shape, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * timesteps * shape.len());
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &label in &labels {
        for _ in 0..timesteps {
            data.extend(maps[label].iter().map(|&p| if rng.gen_bool(p) { 1.0f32 } else { 0.0 }));
        }
    }
    Dataset::new("synthetic", Split::Train, shape, Some(timesteps), data, labels, classes)
}
