use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{Element, Tensor, TensorError};

/// Backward rule of a recorded node. Receives the gradient flowing into the
/// node's output and a mask of which inputs need a gradient; returns one
/// optional gradient per input, in input order.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    /// One entry per op input; `None` for inputs that are constants.
    parents: Vec<Option<usize>>,
    shape: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
    generation: u64,
}

/// Define-by-run recording of differentiable operations.
///
/// Nodes are appended as ops execute, so recording order is a topological
/// order. [`Tensor::backward`] consumes the recording and leaves the tape
/// empty; tensors recorded before that point become stale.
pub struct Tape<T: Element> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Element> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> std::fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("generation", &inner.generation)
            .finish()
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef<T: Element> {
    pub(crate) tape: Tape<T>,
    pub(crate) id: usize,
    pub(crate) generation: u64,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                generation: 0,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn generation(&self) -> u64 {
        self.inner.borrow().generation
    }

    /// Registers `tensor` as a differentiable leaf on this tape. The returned
    /// tensor shares its data with the input.
    pub fn leaf(&self, tensor: &Tensor<T>) -> Tensor<T> {
        let node = self.push(Vec::new(), tensor.shape().to_vec(), None);
        tensor.with_node(Some(node))
    }

    fn push(
        &self,
        parents: Vec<Option<usize>>,
        shape: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> NodeRef<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            parents,
            shape,
            backward,
        });
        NodeRef {
            tape: self.clone(),
            id,
            generation: inner.generation,
        }
    }

    /// Records an op output. Inputs without a node are constants; when no
    /// input carries a node, the output is a constant too and nothing is
    /// recorded.
    pub(crate) fn record(
        op: &'static str,
        inputs: &[&Tensor<T>],
        data: Vec<T>,
        shape: Vec<usize>,
        backward: BackwardFn<T>,
    ) -> Result<Tensor<T>, TensorError> {
        let mut tape: Option<Tape<T>> = None;
        let mut parents = Vec::with_capacity(inputs.len());
        for input in inputs {
            match &input.node {
                None => parents.push(None),
                Some(node) => {
                    if let Some(t) = &tape {
                        if !t.same(&node.tape) {
                            return Err(TensorError::contract(op, "inputs recorded on different tapes"));
                        }
                    }
                    if node.generation != node.tape.generation() {
                        return Err(TensorError::contract(
                            op,
                            "input was recorded before the last backward pass",
                        ));
                    }
                    tape = Some(node.tape.clone());
                    parents.push(Some(node.id));
                }
            }
        }
        let node = tape.map(|t| t.push(parents, shape.clone(), Some(backward)));
        Tensor::from_parts(data, shape, node)
    }

    /// Runs the reverse sweep from `loss` and clears the tape.
    pub(crate) fn backward_from(&self, loss: &NodeRef<T>) -> Result<Gradients<T>, TensorError> {
        let (nodes, generation) = {
            let mut inner = self.inner.borrow_mut();
            if inner.nodes.is_empty() {
                return Err(TensorError::contract("backward", "tape is empty"));
            }
            if loss.generation != inner.generation {
                return Err(TensorError::contract(
                    "backward",
                    "loss was recorded before the last backward pass",
                ));
            }
            let generation = inner.generation;
            inner.generation += 1;
            (std::mem::take(&mut inner.nodes), generation)
        };

        let mut pending: Vec<Option<Vec<T>>> = Vec::new();
        pending.resize_with(nodes.len(), || None);
        pending[loss.id] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();

        // Only nodes at or before the loss can contribute.
        let mut nodes = nodes;
        nodes.truncate(loss.id + 1);
        for (id, node) in nodes.into_iter().enumerate().rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            match node.backward {
                None => {
                    leaves.insert(id, (node.shape, grad));
                }
                Some(rule) => {
                    let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                    let input_grads = rule(&grad, &needs);
                    for (parent, g) in node.parents.iter().zip(input_grads) {
                        if let (Some(p), Some(g)) = (parent, g) {
                            accumulate(&mut pending[*p], g);
                        }
                    }
                }
            }
        }
        Ok(Gradients {
            tape: self.clone(),
            generation,
            leaves,
        })
    }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!(acc.len(), g.len());
            acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
        }
    }
}

/// Accumulated gradients of every leaf reached by a backward pass.
pub struct Gradients<T: Element> {
    tape: Tape<T>,
    generation: u64,
    leaves: HashMap<usize, (Vec<usize>, Vec<T>)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to `leaf`, or `None` when the loss does not
    /// depend on it.
    pub fn get(&self, leaf: &Tensor<T>) -> Option<Tensor<T>> {
        let node = leaf.node.as_ref()?;
        if !node.tape.same(&self.tape) || node.generation != self.generation {
            return None;
        }
        let (shape, data) = self.leaves.get(&node.id)?;
        Tensor::from_vec(data.clone(), shape.clone()).ok()
    }

    /// Gradient with respect to `leaf`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, leaf: &Tensor<T>) -> Tensor<T> {
        self.get(leaf).unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
