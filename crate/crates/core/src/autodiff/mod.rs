//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute. Multiplies (and the
//! divisions, roots, exponentials and logarithms built on them) take a
//! [`MulMode`] choosing ordinary arithmetic, e-operations or a-operations, and
//! the backward sweep applies that mode's gradient rule. Additions are always
//! ordinary float additions.

mod im2col;
mod mode;
mod tape;
mod tensor;

pub use im2col::Conv2dGeometry;
pub use mode::MulMode;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("index {index} out of range for extent {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("kernel {kernel:?} with stride {stride} and padding {padding} does not fit a {input:?} input")]
    Geometry { input: (usize, usize), kernel: (usize, usize), stride: usize, padding: usize },
}
