//! bfloat16 emulation and mixed-precision training.
//!
//! bfloat16 values keep binary32's sign and exponent with a 7-bit mantissa,
//! so widening is exact and narrowing is a rounding of the low 16 bits. Under
//! the mixed policy, multiplies consume and produce bfloat16 while sums,
//! master weights and the optimizer stay in binary32.

pub mod bf16;
mod mixed;
mod policy;

pub use bf16::{a_mult_bf16, int_mul_bf16, quantize, round_bf16, round_bf16_with, Bf16, RoundingMode};
pub use mixed::{mixed_gradients, mixed_step, round_grads, StepGradients};
pub use policy::{GradRounding, MixedPrecisionPolicy, NumberFormat};
