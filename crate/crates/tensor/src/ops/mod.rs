//! Differentiable primitives recorded on a [`Tape`](crate::Tape).

mod activation;
mod conv;
mod elementwise;
mod reduce;
mod shape;

pub use activation::Activation;
pub use conv::{conv2d_forward, ConvLayer};
pub use elementwise::{BinaryKind, UnaryKind, DEFAULT_DIV_EPS};
pub use reduce::ReduceKind;

use crate::scalar::Scalar;
use crate::tape::{Node, Op, Operand, Var};
use crate::tensor::Tensor;

/// View of a tensor as `[outer, axis, inner]` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn backward_rule<S: Scalar>(
    nodes: &[Node<S>],
    node: &Node<S>,
    g: &Tensor<S>,
) -> Vec<(Var, Tensor<S>)> {
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Binary { kind, a, b } => {
            let bval = match b {
                Operand::Var(v) => elementwise::RhsRef::Tensor(val(*v)),
                Operand::Scalar(s) => elementwise::RhsRef::Scalar(*s),
            };
            let (ga, gb) = elementwise::binary_backward(*kind, val(*a), bval, &node.value, g);
            let mut out = Vec::with_capacity(2);
            if needs(*a) {
                out.push((*a, ga));
            }
            if let (Operand::Var(bv), Some(gb)) = (b, gb) {
                if needs(*bv) {
                    out.push((*bv, gb));
                }
            }
            out
        }
        Op::Unary { kind, a } => {
            vec![(*a, elementwise::unary_backward(*kind, val(*a), &node.value, g))]
        }
        Op::Reduce {
            kind,
            a,
            axes,
            picked,
        } => vec![(*a, reduce::reduce_backward(*kind, val(*a), axes, picked, g))],
        Op::Conv2d {
            input,
            weight,
            bias,
        } => {
            let grads = conv::conv2d_backward(
                val(*input),
                val(*weight),
                g,
                needs(*input),
                needs(*weight),
                bias.map(needs).unwrap_or(false),
            );
            let mut out = Vec::with_capacity(3);
            if let Some(gi) = grads.input {
                out.push((*input, gi));
            }
            if let Some(gw) = grads.weight {
                out.push((*weight, gw));
            }
            if let (Some(b), Some(gb)) = (bias, grads.bias) {
                out.push((*b, gb));
            }
            out
        }
        Op::Softmax { a, axis } => vec![(*a, activation::softmax_backward(&node.value, *axis, g))],
        Op::Concat { inputs, axis } => {
            let shapes: Vec<&[usize]> = inputs.iter().map(|v| val(*v).shape()).collect();
            inputs
                .iter()
                .copied()
                .zip(shape::concat_backward(&shapes, *axis, g))
                .filter(|(v, _)| needs(*v))
                .collect()
        }
        Op::Slice { a, axis, start } => {
            vec![(*a, shape::slice_backward(val(*a).shape(), *axis, *start, g))]
        }
        Op::Pad { a, pads } => vec![(*a, shape::pad_backward(val(*a).shape(), pads, g))],
        Op::Reshape { a } => vec![(
            *a,
            g.clone()
                .reshape(val(*a).shape().to_vec())
                .expect("reshape backward preserves size"),
        )],
        Op::Expand { a, axis } => vec![(*a, shape::expand_backward(val(*a).shape(), *axis, g))],
        Op::Custom { inputs, op } => {
            let in_vals: Vec<&Tensor<S>> = inputs.iter().map(|v| val(*v)).collect();
            let grads = op.backward(&in_vals, &node.value, g);
            debug_assert_eq!(grads.len(), inputs.len(), "{} backward arity", op.name());
            inputs
                .iter()
                .copied()
                .zip(grads)
                .filter_map(|(v, gi)| gi.map(|gi| (v, gi)))
                .filter(|(v, _)| needs(*v))
                .collect()
        }
    }
}
