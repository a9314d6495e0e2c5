//! Multiplication modes and the scalar kernels each mode dispatches to.

use std::f32::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::precision::bf16::{self, log_mul_bits};
use crate::precision::{NumberFormat, RoundingMode};
use crate::pseudo_arith::bits::{ABS_MASK, EXPONENT_MASK, MAX_FINITE, MIN_NORMAL, SIGN_MASK};
use crate::pseudo_arith::kernel;

/// Which arithmetic a layer (or a single tape operation) uses for its
/// multiplies and the operations derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MulMode {
    /// Ordinary IEEE754 arithmetic.
    #[default]
    #[serde(rename = "standard")]
    Standard,
    /// e-operations: addition-as-int with its exact derivative.
    #[serde(rename = "exact")]
    ExactOp,
    /// a-operations: addition-as-int plus γ, with approximated gradients.
    #[serde(rename = "approx")]
    ApproxOp,
}

impl MulMode {
    pub const ALL: [MulMode; 3] = [MulMode::Standard, MulMode::ExactOp, MulMode::ApproxOp];

    /// The letter used in configuration labels such as `cE.fa`.
    pub fn label_suffix(self) -> Option<char> {
        match self {
            MulMode::Standard => None,
            MulMode::ExactOp => Some('E'),
            MulMode::ApproxOp => Some('a'),
        }
    }

    /// Whether the gradient of `a * b` with respect to `a` needs `a` itself.
    ///
    /// The e-mult derivative depends on both operands; the a-mult gradient,
    /// like the true one, only on the co-operand and the upstream gradient.
    pub fn grad_reads_own_operand(self) -> bool {
        matches!(self, MulMode::ExactOp)
    }
}

/// A multiply and its gradient, monomorphized into the tensor loops.
///
/// Callers pass operands (including upstream gradients) through
/// [`prepare`](MulKernel::prepare) first.
pub(crate) trait MulKernel: Copy {
    fn prepare(self, x: f32) -> f32;
    fn mul(self, a: f32, b: f32) -> f32;
    /// Contribution to the gradient of `own` from a product `own * co`.
    fn grad(self, own: f32, co: f32, up: f32) -> f32;
    fn is_identity_prepare(self) -> bool {
        true
    }
}

#[derive(Clone, Copy)]
pub(crate) struct StandardKernel;

impl MulKernel for StandardKernel {
    #[inline(always)]
    fn prepare(self, x: f32) -> f32 {
        x
    }
    #[inline(always)]
    fn mul(self, a: f32, b: f32) -> f32 {
        a * b
    }
    #[inline(always)]
    fn grad(self, _own: f32, co: f32, up: f32) -> f32 {
        co * up
    }
}

#[derive(Clone, Copy)]
pub(crate) struct ExactKernel;

impl MulKernel for ExactKernel {
    #[inline(always)]
    fn prepare(self, x: f32) -> f32 {
        x
    }
    #[inline(always)]
    fn mul(self, a: f32, b: f32) -> f32 {
        kernel::int_mul(a, b)
    }
    #[inline(always)]
    fn grad(self, own: f32, co: f32, up: f32) -> f32 {
        kernel::e_mult_grad(own, co, up)
    }
}

#[derive(Clone, Copy)]
pub(crate) struct ApproxKernel {
    pub offset: i32,
}

impl MulKernel for ApproxKernel {
    #[inline(always)]
    fn prepare(self, x: f32) -> f32 {
        x
    }
    #[inline(always)]
    fn mul(self, a: f32, b: f32) -> f32 {
        kernel::log_mul(a, b, self.offset)
    }
    #[inline(always)]
    fn grad(self, _own: f32, co: f32, up: f32) -> f32 {
        kernel::log_mul(co, up, self.offset)
    }
}

#[inline(always)]
fn narrow(x: f32) -> u16 {
    (x.to_bits() >> 16) as u16
}

#[inline(always)]
fn widen(x: u16) -> f32 {
    f32::from_bits((x as u32) << 16)
}

/// True multiply of bfloat16 operands, result rounded back to bfloat16.
#[derive(Clone, Copy)]
pub(crate) struct StandardBf16Kernel {
    pub rounding: RoundingMode,
}

impl MulKernel for StandardBf16Kernel {
    #[inline(always)]
    fn prepare(self, x: f32) -> f32 {
        bf16::quantize(x, self.rounding)
    }
    #[inline(always)]
    fn mul(self, a: f32, b: f32) -> f32 {
        bf16::quantize(a * b, self.rounding)
    }
    #[inline(always)]
    fn grad(self, _own: f32, co: f32, up: f32) -> f32 {
        bf16::quantize(co * up, self.rounding)
    }
    fn is_identity_prepare(self) -> bool {
        false
    }
}

#[derive(Clone, Copy)]
pub(crate) struct ExactBf16Kernel {
    pub rounding: RoundingMode,
}

impl MulKernel for ExactBf16Kernel {
    #[inline(always)]
    fn prepare(self, x: f32) -> f32 {
        bf16::quantize(x, self.rounding)
    }
    #[inline(always)]
    fn mul(self, a: f32, b: f32) -> f32 {
        widen(log_mul_bits(narrow(a), narrow(b), 0))
    }
    #[inline(always)]
    fn grad(self, own: f32, co: f32, up: f32) -> f32 {
        // The scale is a power of two, hence already on the bfloat16 grid.
        let scale = kernel::e_mult_grad_scale(own, co);
        widen(log_mul_bits(narrow(up), narrow(scale), 0))
    }
    fn is_identity_prepare(self) -> bool {
        false
    }
}

#[derive(Clone, Copy)]
pub(crate) struct ApproxBf16Kernel {
    pub rounding: RoundingMode,
    /// γ in units of 2^-7.
    pub offset: i32,
}

impl MulKernel for ApproxBf16Kernel {
    #[inline(always)]
    fn prepare(self, x: f32) -> f32 {
        bf16::quantize(x, self.rounding)
    }
    #[inline(always)]
    fn mul(self, a: f32, b: f32) -> f32 {
        widen(log_mul_bits(narrow(a), narrow(b), self.offset))
    }
    #[inline(always)]
    fn grad(self, _own: f32, co: f32, up: f32) -> f32 {
        widen(log_mul_bits(narrow(co), narrow(up), self.offset))
    }
    fn is_identity_prepare(self) -> bool {
        false
    }
}

/// Everything needed to pick a multiply kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct KernelSelect {
    pub mode: MulMode,
    pub format: NumberFormat,
    pub rounding: RoundingMode,
    /// γ in units of 2^-23.
    pub gamma_fp32: i32,
    /// γ in units of 2^-7.
    pub gamma_bf16: i32,
}

/// Runs `$body` with `$k` bound to the concrete kernel for `$sel`.
macro_rules! with_kernel {
    ($sel:expr, |$k:ident| $body:expr) => {{
        use $crate::autodiff::mode::*;
        use $crate::precision::NumberFormat;
        let sel: KernelSelect = $sel;
        match (sel.mode, sel.format) {
            (MulMode::Standard, NumberFormat::Fp32) => {
                let $k = StandardKernel;
                $body
            }
            (MulMode::ExactOp, NumberFormat::Fp32) => {
                let $k = ExactKernel;
                $body
            }
            (MulMode::ApproxOp, NumberFormat::Fp32) => {
                let $k = ApproxKernel { offset: sel.gamma_fp32 };
                $body
            }
            (MulMode::Standard, NumberFormat::Bf16) => {
                let $k = StandardBf16Kernel { rounding: sel.rounding };
                $body
            }
            (MulMode::ExactOp, NumberFormat::Bf16) => {
                let $k = ExactBf16Kernel { rounding: sel.rounding };
                $body
            }
            (MulMode::ApproxOp, NumberFormat::Bf16) => {
                let $k = ApproxBf16Kernel { rounding: sel.rounding, offset: sel.gamma_bf16 };
                $body
            }
        }
    }};
}
pub(crate) use with_kernel;

/// Division, roots, exponentials and logarithms under a mode, with their
/// gradient rules. These always run in binary32.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ModeArith {
    pub mode: MulMode,
    /// γ in units of 2^-23.
    pub offset: i32,
}

#[inline]
fn exponent_only(x: f32) -> f32 {
    f32::from_bits(x.to_bits() & EXPONENT_MASK)
}

#[inline]
fn is_flushed(x: f32) -> bool {
    x.to_bits() & ABS_MASK < MIN_NORMAL
}

#[inline]
fn is_clamped(out: f32) -> bool {
    let m = out.to_bits() & ABS_MASK;
    m == 0 || m == MAX_FINITE
}

#[inline]
fn with_sign_of(mag: f32, sign_source: f32) -> f32 {
    f32::from_bits((mag.to_bits() & ABS_MASK) | (sign_source.to_bits() & SIGN_MASK))
}

impl ModeArith {
    pub fn div(self, a: f32, b: f32) -> f32 {
        match self.mode {
            MulMode::Standard => a / b,
            MulMode::ExactOp => kernel::log_div(a, b, 0),
            MulMode::ApproxOp => kernel::log_div(a, b, -self.offset),
        }
    }

    /// Gradients of `out = div(a, b)` with respect to `a` and `b`.
    pub fn div_grads(self, a: f32, b: f32, out: f32, up: f32) -> (f32, f32) {
        match self.mode {
            MulMode::Standard => (up / b, -(up * out) / b),
            MulMode::ExactOp => {
                if is_flushed(b) {
                    return (0.0, 0.0);
                }
                if is_flushed(a) {
                    // Right limit along a zero mantissa: 2^floor(-l|b|).
                    let scale = with_sign_of(exponent_only(kernel::log_div(1.0, b, 0)), b);
                    return (kernel::int_mul(up, scale), 0.0);
                }
                if is_clamped(out) {
                    return (0.0, 0.0);
                }
                let e = exponent_only(out);
                let sa = kernel::int_mul(with_sign_of(e, b), kernel::l_prime(a));
                let sb = kernel::int_mul(with_sign_of(e, -a), kernel::l_prime(b));
                (kernel::int_mul(up, sa), kernel::int_mul(up, sb))
            }
            MulMode::ApproxOp => {
                let ga = kernel::log_div(up, b, -self.offset);
                let gb = -kernel::log_div(kernel::log_mul(up, out, self.offset), b, -self.offset);
                (ga, gb)
            }
        }
    }

    pub fn sqrt(self, x: f32) -> f32 {
        match self.mode {
            MulMode::Standard => x.max(0.0).sqrt(),
            MulMode::ExactOp => kernel::log_sqrt(x, 0),
            MulMode::ApproxOp => kernel::log_sqrt(x, self.offset),
        }
    }

    pub fn sqrt_grad(self, x: f32, out: f32, up: f32) -> f32 {
        if x <= 0.0 || out <= 0.0 {
            return 0.0;
        }
        match self.mode {
            MulMode::Standard => up / (2.0 * out),
            MulMode::ExactOp => {
                if is_flushed(x) || is_clamped(out) {
                    return 0.0;
                }
                let scale = kernel::int_mul(kernel::int_mul(exponent_only(out), 0.5), kernel::l_prime(x));
                kernel::int_mul(up, scale)
            }
            MulMode::ApproxOp => kernel::int_mul(kernel::log_div(up, out, -self.offset), 0.5),
        }
    }

    pub fn exp2(self, x: f32) -> f32 {
        match self.mode {
            MulMode::Standard => x.exp2(),
            MulMode::ExactOp => kernel::log_exp2(x, 0),
            MulMode::ApproxOp => kernel::log_exp2(x, self.offset),
        }
    }

    pub fn exp2_grad(self, x: f32, out: f32, up: f32) -> f32 {
        match self.mode {
            MulMode::Standard => up * out * LN_2,
            MulMode::ExactOp => {
                if is_clamped(out) {
                    0.0
                } else {
                    kernel::int_mul(up, kernel::e_prime(x))
                }
            }
            MulMode::ApproxOp => {
                kernel::log_mul(kernel::log_mul(up, out, self.offset), LN_2, self.offset)
            }
        }
    }

    pub fn log2(self, x: f32) -> f32 {
        match self.mode {
            MulMode::Standard => x.log2(),
            MulMode::ExactOp => kernel::log_log2(x, 0),
            MulMode::ApproxOp => kernel::log_log2(x, self.offset),
        }
    }

    pub fn log2_grad(self, x: f32, up: f32) -> f32 {
        match self.mode {
            MulMode::Standard => up / (x * LN_2),
            MulMode::ExactOp => {
                if x <= 0.0 || is_flushed(x) {
                    0.0
                } else {
                    kernel::int_mul(up, kernel::l_prime(x))
                }
            }
            MulMode::ApproxOp => {
                if x <= 0.0 || is_flushed(x) {
                    0.0
                } else {
                    kernel::log_div(up, kernel::log_mul(x, LN_2, self.offset), -self.offset)
                }
            }
        }
    }
}
