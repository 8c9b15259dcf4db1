//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Each node keeps
//! its value plus whatever the backward rule needs (im2col buffers,
//! normalised activations, attention weights). [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients; [`Graph::param_grads`] then
//! collects the gradients of every parameter leaf.
//!
//! Activations use a feature-major layout throughout: rows are features or
//! channels, columns are time steps, patches or sequence positions. A batch
//! of `B` sequences of length `N` is `B * N` contiguous column blocks.

mod ops;

use ndarray::Array2;

use crate::Scalar;

use ops::Op;
pub use ops::{attention_weights, softmax_columns, BatchStats, ConvShape};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Identifier of a trainable tensor in a parameter store.
pub type ParamId = usize;

struct Node<T: Scalar> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Tape of recorded operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf bound to parameter `id`.
    pub fn param(&mut self, id: ParamId, value: Array2<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked but which is not a parameter; used
    /// to differentiate with respect to inputs.
    pub fn variable(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect
    /// to `v`, if `v` took part in the computation.
    pub fn grad(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                let parent_grads = node.op.backward(&g, &node.value, &self.nodes);
                for (parent, pg) in parent_grads {
                    if !self.nodes[parent.0].needs_grad {
                        continue;
                    }
                    match &mut grads[parent.0] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
    }

    /// Gradients of parameter leaves, in node order. A parameter used more
    /// than once appears once per use.
    pub fn param_grads(&self) -> Vec<(ParamId, &Array2<T>)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let id = n.param?;
                self.grads.get(i).and_then(Option::as_ref).map(|g| (id, g))
            })
            .collect()
    }

    /// Parameter leaves that were created, with their node handles.
    pub fn param_vars(&self) -> Vec<(ParamId, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, Var(i))))
            .collect()
    }

    /// First node (in tape order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| n.value.iter().any(|v| !v.is_finite()))
            .map(Var)
    }
}
