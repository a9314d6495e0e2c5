//! Multiplication-free neural-network arithmetic.
//!
//! * [`pseudo_arith`]: addition-as-int kernels (e-operations and
//!   a-operations) with their reference functions and derivatives.
//! * [`precision`]: bfloat16 emulation and the BF16-multiply /
//!   FP32-accumulate training policy.
//! * [`autodiff`]: tensors and a reverse-mode tape whose multiplies are
//!   dispatched on a per-operation [`MulMode`](autodiff::MulMode).
//! * [`nn`]: linear, convolution, batch-norm and softmax cross-entropy
//!   layers, optimizers, and a sequential model.
//! * [`harness`]: MNIST loading, experiment configs, training runs, error
//!   sweeps and reports.

pub mod autodiff;
pub mod harness;
pub mod nn;
pub mod precision;
pub mod pseudo_arith;
