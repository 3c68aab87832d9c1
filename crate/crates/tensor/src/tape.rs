use std::fmt;

use crate::error::{Result, TensorError};
use crate::ops::{self, BinaryKind, ReduceKind, UnaryKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Right-hand operand of a binary elementwise op.
#[derive(Clone, Copy, Debug)]
pub enum Operand<S> {
    Var(Var),
    Scalar(S),
}

impl<S> From<Var> for Operand<S> {
    fn from(v: Var) -> Self {
        Operand::Var(v)
    }
}

/// Operation with a backward rule supplied from outside this crate.
///
/// The caller computes the forward value itself and records it with
/// [`Tape::custom`]. `backward` returns one optional gradient per input, in
/// input order, each shaped like the corresponding input.
pub trait CustomOp<S: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
        grad_output: &Tensor<S>,
    ) -> Vec<Option<Tensor<S>>>;
}

pub(crate) enum Op<S: Scalar> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Operand<S>,
    },
    Unary {
        kind: UnaryKind<S>,
        a: Var,
    },
    Reduce {
        kind: ReduceKind,
        a: Var,
        axes: Vec<usize>,
        /// Input flat index chosen for each output element (max/min only).
        picked: Vec<usize>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Pad {
        a: Var,
        pads: Vec<(usize, usize)>,
    },
    Reshape {
        a: Var,
    },
    Expand {
        a: Var,
        axis: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<S>>,
    },
}

pub(crate) struct Node<S: Scalar> {
    pub(crate) value: Tensor<S>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<S>,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, so every operation's inputs
/// precede it and a reverse sweep visits nodes in a valid topological order.
/// A tape is single-threaded; independent tapes may live on different threads.
pub struct Tape<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> fmt::Debug for Tape<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf (gradients are collected for it).
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records the result of an externally computed operation.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<S>,
        op: Box<dyn CustomOp<S>>,
    ) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.record(
            output,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op node; when no input needs a gradient the backward rule is
    /// dropped and the node becomes a constant.
    pub(crate) fn record(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        if requires_grad {
            self.push(value, true, op)
        } else {
            self.push(value, false, Op::Leaf)
        }
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape and returns the
    /// gradient of every trainable leaf reachable from `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<S>>> = (0..n).map(|_| None).collect();
        if !loss_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(loss_node.value.shape().to_vec(), S::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = ops::backward_rule(&self.nodes, node, &g);
            for (var, gin) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[var.0], gin);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
