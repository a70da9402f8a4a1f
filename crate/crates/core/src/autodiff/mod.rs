//! Reverse-mode automatic differentiation over dense `f64` tensors, with
//! support for differentiating through a gradient computation.

mod check;
mod grad;
mod index;
mod ops;
mod primitive;
mod tape;
mod tensor;

pub use check::{finite_difference_check, finite_difference_check_entries};
pub use grad::{gradient_values, gradients, GradMap};
pub use ops::broadcast_shape;
pub use primitive::{apply_primitive, Primitive};
pub use tape::{NonFiniteReport, Tape};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch { op: String, shapes: Vec<Vec<usize>> },
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("differentiation target #{0} does not require a gradient")]
    NotDifferentiable(usize),
}
