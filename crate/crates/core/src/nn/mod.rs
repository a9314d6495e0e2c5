//! Layers, losses, optimizers and a sequential model.
//!
//! Every layer takes a [`MulMode`](crate::autodiff::MulMode) that governs
//! all of its multiplies and the divisions, square roots, exponentials and
//! logarithms built from them. Additions, and the optimizer, always use
//! ordinary binary32 arithmetic.

mod layers;
mod model;
mod optim;

pub use layers::{batchnorm_forward, conv2d_forward, linear_forward, softmax_xent_forward, BatchStats, RunningStats};
pub use model::{mode_label, Forward, LayerKind, LayerSpec, Model};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch norm needs at least 2 samples in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f32),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
