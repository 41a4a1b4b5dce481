//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable n-dimensional array. Tensors registered on a
//! [`Tape`] (via [`Tape::leaf`]) and every op result derived from them carry a
//! tape node; everything else is a constant and records nothing.
//!
//! ```
//! use tna_snn::tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let w = tape.leaf(&Tensor::from_vec(vec![1.0, -2.0], vec![2]).unwrap());
//! let loss = w.mul(&w).unwrap().sum().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&w).unwrap().data(), &[2.0, -4.0]);
//! ```

mod conv;
mod element;
mod ops;
mod tape;

use std::fmt;
use std::rc::Rc;

use thiserror::Error;

pub use element::Element;
pub use ops::custom_grad;
pub use tape::{Gradients, Tape};

use tape::NodeRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Self::Contract {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major n-dimensional array, optionally attached to a tape node.
///
/// A zero-dimensional shape (`[]`) is a scalar holding one value.
#[derive(Clone)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Rc<Vec<T>>,
    node: Option<NodeRef<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: Vec<usize>) -> Result<Self> {
        Self::from_parts(data, shape, None)
    }

    pub(crate) fn from_parts(data: Vec<T>, shape: Vec<usize>, node: Option<NodeRef<T>>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::contract("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data: Rc::new(data),
            node,
        })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: Rc::new(vec![value]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Rc::new(vec![value; len]),
            node: None,
        }
    }

    pub(crate) fn with_node(&self, node: Option<NodeRef<T>>) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<T>> {
        Rc::clone(&self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(TensorError::contract("item", format!("tensor of shape {:?} is not a scalar", self.shape)));
        }
        Ok(self.data[0])
    }

    /// Same values, cut off from the tape.
    pub fn detach(&self) -> Self {
        self.with_node(None)
    }

    /// Backpropagates from this scalar and clears its tape.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.data.len() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape),
            ));
        }
        let node = self
            .node
            .as_ref()
            .ok_or_else(|| TensorError::contract("backward", "loss is not recorded on a tape"))?;
        node.tape.clone().backward_from(node)
    }

    /// Converts element type. The result is a constant.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect();
        Tensor {
            shape: self.shape.clone(),
            data: Rc::new(data),
            node: None,
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
