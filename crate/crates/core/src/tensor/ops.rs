use std::rc::Rc;

use super::tape::Tape;
use super::{Element, Result, Tensor, TensorError};

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Passes `forward` through unchanged while routing gradients to
/// `surrogate_input`, scaled elementwise by `rule(surrogate_input)`.
///
/// This is how a non-differentiable forward value (a Heaviside step) gets a
/// substitute derivative in the backward pass.
pub fn custom_grad<T: Element>(
    forward: &Tensor<T>,
    surrogate_input: &Tensor<T>,
    rule: impl Fn(T) -> T,
) -> Result<Tensor<T>> {
    same_shape("custom_grad", forward, surrogate_input)?;
    let local: Vec<T> = surrogate_input.data().iter().map(|&x| rule(x)).collect();
    Tape::record(
        "custom_grad",
        &[surrogate_input],
        forward.to_vec(),
        forward.shape().to_vec(),
        Box::new(move |g, _| vec![Some(g.iter().zip(&local).map(|(&g, &d)| g * d).collect())]),
    )
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Tape::record(
            "add",
            &[self, other],
            data,
            self.shape().to_vec(),
            Box::new(|g, needs| {
                let grad = |need: bool| need.then(|| g.to_vec());
                vec![grad(needs[0]), grad(needs[1])]
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Tape::record(
            "sub",
            &[self, other],
            data,
            self.shape().to_vec(),
            Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.to_vec()),
                    needs[1].then(|| g.iter().map(|&v| -v).collect()),
                ]
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.data_rc(), other.data_rc());
        Tape::record(
            "mul",
            &[self, other],
            data,
            self.shape().to_vec(),
            Box::new(move |g, needs| {
                let times = |x: &Rc<Vec<T>>| g.iter().zip(x.iter()).map(|(&g, &v)| g * v).collect();
                vec![needs[0].then(|| times(&b)), needs[1].then(|| times(&a))]
            }),
        )
    }

    pub fn scale(&self, factor: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v * factor).collect();
        Tape::record(
            "scale",
            &[self],
            data,
            self.shape().to_vec(),
            Box::new(move |g, _| vec![Some(g.iter().map(|&v| v * factor).collect())]),
        )
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, value: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v + value).collect();
        Tape::record(
            "add_scalar",
            &[self],
            data,
            self.shape().to_vec(),
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Adds `bias` (length `shape[axis]`) along `axis`, broadcasting over
    /// every other axis.
    pub fn add_bias(&self, bias: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() || bias.ndim() != 1 || bias.len() != self.shape()[axis] {
            return Err(TensorError::shape("add_bias", self.shape(), bias.shape()));
        }
        let channels = self.shape()[axis];
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let b = bias.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / inner) % channels])
            .collect();
        Tape::record(
            "add_bias",
            &[self, bias],
            data,
            self.shape().to_vec(),
            Box::new(move |g, needs| {
                let db = needs[1].then(|| {
                    let mut db = vec![T::zero(); channels];
                    for (i, &v) in g.iter().enumerate() {
                        let c = (i / inner) % channels;
                        db[c] = db[c] + v;
                    }
                    db
                });
                vec![needs[0].then(|| g.to_vec()), db]
            }),
        )
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(), false, other.data(), false, T::zero(), &mut out);
        let (a, b) = (self.data_rc(), other.data_rc());
        Tape::record(
            "matmul",
            &[self, other],
            out,
            vec![m, n],
            Box::new(move |g, needs| {
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let da = needs[0].then(|| {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, false, &b, true, T::zero(), &mut da);
                    da
                });
                let db = needs[1].then(|| {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, &a, true, g, false, T::zero(), &mut db);
                    db
                });
                vec![da, db]
            }),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let total = self.data().iter().copied().sum();
        let len = self.len();
        Tape::record(
            "sum",
            &[self],
            vec![total],
            Vec::new(),
            Box::new(move |g, _| vec![Some(vec![g[0]; len])]),
        )
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = T::from_usize(self.len()).expect("length fits element type");
        self.sum()?.scale(T::one() / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(TensorError::contract("sum_axis", format!("axis {axis} out of range for {:?}", self.shape())));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let extent = self.shape()[axis];
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let src = &self.data()[(o * extent + a) * inner..][..inner];
                let dst = &mut out[o * inner..][..inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tape::record(
            "sum_axis",
            &[self],
            out,
            shape,
            Box::new(move |g, _| {
                let mut dx = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    for _ in 0..extent {
                        dx.extend_from_slice(&g[o * inner..][..inner]);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let extent = *self
            .shape()
            .get(axis)
            .ok_or_else(|| TensorError::contract("mean_axis", format!("axis {axis} out of range")))?;
        self.sum_axis(axis)?.scale(T::one() / T::from_usize(extent).expect("extent fits"))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        Tape::record(
            "reshape",
            &[self],
            self.to_vec(),
            shape.to_vec(),
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Collapses every axis after the first.
    pub fn flatten(&self) -> Result<Tensor<T>> {
        let n = self.shape().first().copied().unwrap_or(1);
        self.reshape(&[n, self.len() / n])
    }

    /// Row-wise log-softmax of a rank-2 tensor.
    pub fn log_softmax(&self) -> Result<Tensor<T>> {
        if self.ndim() != 2 {
            return Err(TensorError::contract("log_softmax", format!("expected rank 2, got {:?}", self.shape())));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        let mut out = Vec::with_capacity(self.len());
        for row in self.data().chunks(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let saved = out.clone();
        Tape::record(
            "log_softmax",
            &[self],
            out,
            vec![rows, cols],
            Box::new(move |g, _| {
                let mut dx = Vec::with_capacity(rows * cols);
                for (grow, yrow) in g.chunks(cols).zip(saved.chunks(cols)) {
                    let total: T = grow.iter().copied().sum();
                    dx.extend(grow.iter().zip(yrow).map(|(&gi, &yi)| gi - yi.exp() * total));
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Selects `x[n, indices[n]]` from a rank-2 tensor.
    pub fn pick(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if self.ndim() != 2 || self.shape()[0] != indices.len() {
            return Err(TensorError::shape("pick", self.shape(), &[indices.len()]));
        }
        let cols = self.shape()[1];
        if let Some(bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(TensorError::contract("pick", format!("index {bad} out of range for {cols} columns")));
        }
        let data = indices.iter().enumerate().map(|(r, &c)| self.data()[r * cols + c]).collect();
        let idx = indices.to_vec();
        let len = self.len();
        Tape::record(
            "pick",
            &[self],
            data,
            vec![indices.len()],
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); len];
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * cols + c] = g[r];
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Elementwise map with a caller-provided derivative.
    pub fn map(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        let local: Vec<T> = self.data().iter().map(|&v| df(v)).collect();
        Tape::record(
            "map",
            &[self],
            data,
            self.shape().to_vec(),
            Box::new(move |g, _| vec![Some(g.iter().zip(&local).map(|(&g, &d)| g * d).collect())]),
        )
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        self.mul(self)
    }
}
