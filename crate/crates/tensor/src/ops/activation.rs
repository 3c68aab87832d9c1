use super::split_axis;
use super::UnaryKind;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Negative slope 0.01.
    LeakyRelu,
    Sigmoid,
    /// Softmax over the channel axis: axis 1 for rank-4 `[N, C, H, W]`,
    /// axis 0 otherwise.
    SoftmaxChannel,
}

pub const LEAKY_SLOPE: f64 = 0.01;

pub(crate) fn softmax_forward<S: Scalar>(a: &Tensor<S>, axis: usize) -> Tensor<S> {
    let (outer, len, inner) = split_axis(a.shape(), axis);
    let src = a.data();
    let mut out = vec![S::zero(); a.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let mx = (0..len).map(|k| src[at(k)]).fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for k in 0..len {
                let e = (src[at(k)] - mx).exp();
                out[at(k)] = e;
                sum = sum + e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / sum;
            }
        }
    }
    Tensor::new(a.shape().to_vec(), out).expect("same shape")
}

pub(crate) fn softmax_backward<S: Scalar>(y: &Tensor<S>, axis: usize, g: &Tensor<S>) -> Tensor<S> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let mut out = vec![S::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let dot: S = (0..len).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
            for k in 0..len {
                out[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("same shape")
}

impl<S: Scalar> Tape<S> {
    pub fn activation(&mut self, kind: Activation, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(TensorError::NonFinite("activation input"));
        }
        Ok(match kind {
            Activation::Relu => self.unary(UnaryKind::Relu, a),
            Activation::LeakyRelu => self.unary(UnaryKind::LeakyRelu(S::of(LEAKY_SLOPE)), a),
            Activation::Sigmoid => self.unary(UnaryKind::Sigmoid, a),
            Activation::SoftmaxChannel => {
                let axis = if self.value(a).rank() == 4 { 1 } else { 0 };
                self.softmax(a, axis)?
            }
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::LeakyRelu(S::of(LEAKY_SLOPE)), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let rank = self.value(a).rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank,
            });
        }
        let value = softmax_forward(self.value(a), axis);
        let rg = self.requires_grad(a);
        Ok(self.record(value, rg, Op::Softmax { a, axis }))
    }
}
