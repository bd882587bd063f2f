//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod gradcheck;
pub(crate) mod kernels;
mod params;
mod tape;
mod tensor;

use alloc::vec::Vec;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use kernels::ConvGeometry;
pub use params::{normal, uniform, Bound, ParamId, ParamStore};
pub use tape::{sigmoid, wrap_phase, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {reason} (shape {shape:?})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{len} values cannot fill shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for axis of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value while probing component {index}")]
    NonFinite { index: usize },
    #[error("not differentiable at component {index}: one-sided slopes {left} and {right}")]
    NonDifferentiable { index: usize, left: f64, right: f64 },
}
