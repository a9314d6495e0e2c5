//! bfloat16 (1+8+7) emulation and the addition-as-int kernels on it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pseudo_arith::{ArithError, GammaCorrection};

pub const BF16_BIAS: u16 = 0x3F80;
const SIGN: u16 = 0x8000;
const ABS: u16 = 0x7FFF;
const EXPONENT: u16 = 0x7F80;
const MIN_NORMAL: u16 = 0x0080;
const MAX_FINITE: u16 = 0x7F7F;

/// How binary32 values are narrowed to bfloat16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    #[default]
    NearestEven,
    /// Drop the low 16 bits. Ablation only.
    Truncate,
}

/// A bfloat16 bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Bf16(u16);

impl Bf16 {
    pub const ONE: Self = Self(BF16_BIAS);
    pub const MAX: Self = Self(MAX_FINITE);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Self(bits)
    }

    #[inline]
    pub const fn bits(self) -> u16 {
        self.0
    }

    /// Widening to binary32 appends sixteen zero bits; always exact.
    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    pub fn is_finite(self) -> bool {
        self.0 & EXPONENT != EXPONENT
    }
}

impl fmt::Debug for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bf16({:#06x} = {})", self.0, self.to_f32())
    }
}

/// Narrows the bits of a finite binary32 value. Values that would round past
/// the largest finite bfloat16 saturate to it.
#[inline(always)]
fn narrow_bits(bits: u32, mode: RoundingMode) -> u16 {
    let sign = (bits >> 16) as u16 & SIGN;
    let mag = bits & 0x7FFF_FFFF;
    let rounded = match mode {
        RoundingMode::NearestEven => {
            let lsb = (mag >> 16) & 1;
            (mag + 0x7FFF + lsb) >> 16
        }
        RoundingMode::Truncate => mag >> 16,
    } as u16;
    sign | rounded.min(MAX_FINITE)
}

/// Round-to-nearest-even narrowing (or truncation, per `mode`).
pub fn round_bf16_with(x: f32, mode: RoundingMode) -> Result<Bf16, ArithError> {
    if !x.is_finite() {
        return Err(ArithError::NonFinite(x));
    }
    Ok(Bf16(narrow_bits(x.to_bits(), mode)))
}

/// Round-to-nearest-even narrowing to bfloat16.
pub fn round_bf16(x: f32) -> Result<Bf16, ArithError> {
    round_bf16_with(x, RoundingMode::NearestEven)
}

/// `x` rounded onto the bfloat16 grid and widened back, for finite `x`.
#[inline(always)]
pub fn quantize(x: f32, mode: RoundingMode) -> f32 {
    Bf16(narrow_bits(x.to_bits(), mode)).to_f32()
}

/// Addition-as-int on bfloat16 patterns with a log-domain `offset` in units of
/// `2^-7`. Same sign, flush, underflow and saturation rules as the binary32
/// kernel.
#[inline(always)]
pub fn log_mul_bits(a: u16, b: u16, offset: i32) -> u16 {
    let sign = (a ^ b) & SIGN;
    let ma = (a & ABS) as i32;
    let mb = (b & ABS) as i32;
    let t = ma + mb + offset;
    let mag = if ma < MIN_NORMAL as i32 || mb < MIN_NORMAL as i32 || t < (BF16_BIAS + MIN_NORMAL) as i32 {
        0
    } else if t > (BF16_BIAS + MAX_FINITE) as i32 {
        MAX_FINITE
    } else {
        (t - BF16_BIAS as i32) as u16
    };
    sign | mag
}

fn check(x: Bf16) -> Result<(), ArithError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ArithError::NonFinite(x.to_f32()))
    }
}

/// e-mult on bfloat16: `bits(a) + bits(b) - 0x3F80` on magnitudes.
pub fn int_mul_bf16(a: Bf16, b: Bf16) -> Result<Bf16, ArithError> {
    check(a)?;
    check(b)?;
    Ok(Bf16(log_mul_bits(a.0, b.0, 0)))
}

/// The bfloat16 γ: rounded to 7 fractional bits.
pub fn gamma_bf16() -> GammaCorrection {
    GammaCorrection::with_frac_bits(1.0, 7)
}

/// a-mult on bfloat16 with the γ offset rounded to the 7-bit grid.
pub fn a_mult_bf16(a: Bf16, b: Bf16) -> Result<Bf16, ArithError> {
    a_mult_bf16_with(&gamma_bf16(), a, b)
}

/// a-mult on bfloat16 with a caller-supplied 7-fractional-bit γ.
pub fn a_mult_bf16_with(gamma: &GammaCorrection, a: Bf16, b: Bf16) -> Result<Bf16, ArithError> {
    assert_eq!(gamma.frac_bits(), 7, "bfloat16 kernels need a 7-bit gamma");
    check(a)?;
    check(b)?;
    Ok(Bf16(log_mul_bits(a.0, b.0, gamma.fixed())))
}
