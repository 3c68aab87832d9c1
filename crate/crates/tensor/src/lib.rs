//! Deterministic CPU tensor engine with tape-based reverse-mode autodiff.
//!
//! Values live in [`Tensor`]; differentiable computations are recorded on a
//! [`Tape`] through [`Var`] handles and differentiated with
//! [`Tape::backward`]. Everything runs on plain CPU loops, and parallel
//! kernels partition their outputs so results are bit-identical for any
//! thread count.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod rtf;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{conv2d_forward, Activation, BinaryKind, ConvLayer, ReduceKind, UnaryKind};
pub use scalar::Scalar;
pub use tape::{CustomOp, Gradients, Operand, Tape, Var};
pub use tensor::Tensor;
