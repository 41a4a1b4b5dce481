use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::snn::InputShape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Zero padding on every side before cropping back to the original size.
    pub pad: usize,
    pub hflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { pad: 4, hflip_prob: 0.5 }
    }
}

/// Zero-pads by `pad`, crops the original size at offset `(dy, dx)` of the
/// padded frame, then mirrors horizontally if `flip`. Offsets range over
/// `0..=2*pad`; `(pad, pad)` without flip is the identity.
pub fn crop_flip(img: &[f32], shape: InputShape, pad: usize, dy: usize, dx: usize, flip: bool) -> Vec<f32> {
    let InputShape { channels, height, width } = shape;
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for y in 0..height {
            let sy = (y + dy).checked_sub(pad).filter(|&v| v < height);
            for x in 0..width {
                let ox = if flip { width - 1 - x } else { x };
                let sx = (ox + dx).checked_sub(pad).filter(|&v| v < width);
                if let (Some(sy), Some(sx)) = (sy, sx) {
                    out[(c * height + y) * width + x] = img[(c * height + sy) * width + sx];
                }
            }
        }
    }
    out
}

/// Random crop and flip of one unit-scaled image. Normalization is applied
/// separately, after augmentation.
pub fn augment<R: Rng>(img: &[f32], shape: InputShape, cfg: &AugmentConfig, rng: &mut R) -> Vec<f32> {
    let dy = rng.gen_range(0..=2 * cfg.pad);
    let dx = rng.gen_range(0..=2 * cfg.pad);
    let flip = rng.gen_bool(cfg.hflip_prob);
    crop_flip(img, shape, cfg.pad, dy, dx, flip)
}
