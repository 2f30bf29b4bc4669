//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every forward operation appends a node to a [`Tape`]. Nodes only refer to
//! earlier nodes, so insertion order is a topological order and
//! [`Tape::backward`] walks the tape once, newest to oldest.
//!
//! ```
//! use vqvid::autodiff::Tape;
//! use vqvid::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new([1, 2], vec![3.0, -1.0]).unwrap());
//! let y = tape.sum_sq(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0, -2.0]);
//! ```

mod attention;
mod conv;
mod gradcheck;
mod ops;

pub use attention::AttentionKeys;
pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Transpose(Var),
    MaskedSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SumSq(Var),
    Sum(Var),
    Mean(Var),
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        x: Var,
        kernel: Var,
        geom: ConvGeometry,
    },
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SparseAttention(Box<attention::AttentionCache>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for a single backward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
    /// Values returned by successive `stop_gradient` calls.
    stopped: Vec<Tensor>,
    /// When set, `stop_gradient` replays these instead of its input.
    frozen: Option<Vec<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// New tape. Non-finite detection is on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
            stopped: Vec::new(),
            frozen: None,
        }
    }

    /// Enables or disables the NaN/Inf check on every produced value.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Makes the `k`-th `stop_gradient` call return `values[k]` in place of
    /// its input, so a function can be re-evaluated with every stopped
    /// quantity held at an earlier point.
    pub fn with_frozen_stops(mut self, values: Vec<Tensor>) -> Self {
        self.frozen = Some(values);
        self
    }

    /// Values produced by `stop_gradient` so far, in call order.
    pub fn stopped_values(&self) -> &[Tensor] {
        &self.stopped
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Identity in the forward pass; blocks every gradient in the backward pass.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let k = self.stopped.len();
        let value = match &self.frozen {
            Some(f) if k < f.len() && f[k].shape() == self.shape(x) => f[k].clone(),
            _ => self.value(x).clone(),
        };
        self.stopped.push(value.clone());
        self.constant(value)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Adds into the gradient slot of `v`, allocating zeros on first touch.
    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.shape(v).to_vec();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
