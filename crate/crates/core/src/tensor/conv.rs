//! 3×3 same-padding convolution (lowered to GEMM through patch gathering)
//! and 2×2 average pooling.

use super::tape::Tape;
use super::{Element, Result, Tensor, TensorError};

const K: usize = 3;
const PAD: usize = 1;

/// Gathers the 3×3 neighbourhood of every pixel into a `(C·9) × (H·W)` matrix.
fn im2col<T: Element>(image: &[T], channels: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &image[c * hw..][..hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((c * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky;
                    let out = &mut row[y * w..][..w];
                    if sy < PAD || sy - PAD >= h {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy - PAD) * w..][..w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x + kx;
                        *o = if sx < PAD || sx - PAD >= w { T::zero() } else { src[sx - PAD] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto an image; adjoint of [`im2col`].
fn col2im<T: Element>(cols: &[T], channels: usize, h: usize, w: usize, image: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut image[c * hw..][..hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((c * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < PAD || sy - PAD >= h {
                        continue;
                    }
                    let dst = &mut plane[(sy - PAD) * w..][..w];
                    for x in 0..w {
                        let sx = x + kx;
                        if sx >= PAD && sx - PAD < w {
                            dst[sx - PAD] = dst[sx - PAD] + row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Cross-correlation of an `N×C×H×W` batch with an `F×C×3×3` kernel,
    /// stride 1, zero padding 1. Output is `N×F×H×W`.
    pub fn conv2d(&self, kernel: &Tensor<T>) -> Result<Tensor<T>> {
        if self.ndim() != 4 || kernel.ndim() != 4 || kernel.shape()[2] != K || kernel.shape()[3] != K {
            return Err(TensorError::shape("conv2d", self.shape(), kernel.shape()));
        }
        let (n, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let filters = kernel.shape()[0];
        if kernel.shape()[1] != c {
            return Err(TensorError::shape("conv2d", self.shape(), kernel.shape()));
        }
        let hw = h * w;
        let patch = c * K * K;
        let keep_cols = kernel.requires_grad();
        let mut saved_cols = if keep_cols { vec![T::zero(); n * patch * hw] } else { Vec::new() };
        let mut scratch = vec![T::zero(); patch * hw];
        let mut out = vec![T::zero(); n * filters * hw];
        for i in 0..n {
            let cols: &mut [T] = if keep_cols {
                &mut saved_cols[i * patch * hw..][..patch * hw]
            } else {
                &mut scratch
            };
            im2col(&self.data()[i * c * hw..][..c * hw], c, h, w, cols);
            T::gemm(filters, patch, hw, kernel.data(), false, cols, false, T::zero(), &mut out[i * filters * hw..][..filters * hw]);
        }
        let kernel_data = kernel.data_rc();
        Tape::record(
            "conv2d",
            &[self, kernel],
            out,
            vec![n, filters, h, w],
            Box::new(move |g, needs| {
                let dinput = needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * c * hw];
                    let mut dcols = vec![T::zero(); patch * hw];
                    for i in 0..n {
                        // dcols = Kᵀ · dOut
                        T::gemm(patch, filters, hw, &kernel_data, true, &g[i * filters * hw..][..filters * hw], false, T::zero(), &mut dcols);
                        col2im(&dcols, c, h, w, &mut dx[i * c * hw..][..c * hw]);
                    }
                    dx
                });
                let dkernel = needs[1].then(|| {
                    let mut dk = vec![T::zero(); filters * patch];
                    for i in 0..n {
                        // dK += dOut · colsᵀ
                        T::gemm(filters, hw, patch, &g[i * filters * hw..][..filters * hw], false, &saved_cols[i * patch * hw..][..patch * hw], true, T::one(), &mut dk);
                    }
                    dk
                });
                vec![dinput, dkernel]
            }),
        )
    }

    /// Non-overlapping 2×2 mean over the last two axes of an `N×C×H×W` tensor.
    pub fn avgpool2(&self) -> Result<Tensor<T>> {
        if self.ndim() != 4 || !self.shape()[2].is_multiple_of(2) || !self.shape()[3].is_multiple_of(2) {
            let halved: Vec<usize> = self.shape().iter().enumerate().map(|(i, &d)| if i >= 2 { d / 2 } else { d }).collect();
            return Err(TensorError::shape("avgpool2", self.shape(), &halved));
        }
        let (n, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64_lossy(0.25);
        let planes = n * c;
        let mut out = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            let src = &self.data()[p * h * w..][..h * w];
            let dst = &mut out[p * oh * ow..][..oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let (sy, sx) = (2 * y, 2 * x);
                    let s = src[sy * w + sx] + src[sy * w + sx + 1] + src[(sy + 1) * w + sx] + src[(sy + 1) * w + sx + 1];
                    dst[y * ow + x] = s * quarter;
                }
            }
        }
        Tape::record(
            "avgpool2",
            &[self],
            out,
            vec![n, c, oh, ow],
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for y in 0..h {
                        for x in 0..w {
                            dx[p * h * w + y * w + x] = g[p * oh * ow + (y / 2) * ow + x / 2] * quarter;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}
