//! Bit-field views of IEEE754 binary32 values and the fixed-point log domain.

use std::fmt;
use std::ops::{Add, Neg, Sub};

/// Exponent bias expressed in the integer view of a binary32 value (`127 << 23`).
pub const BIAS: u32 = 0x3F80_0000;
pub const SIGN_MASK: u32 = 0x8000_0000;
pub const ABS_MASK: u32 = 0x7FFF_FFFF;
pub const EXPONENT_MASK: u32 = 0x7F80_0000;
pub const MANTISSA_MASK: u32 = 0x007F_FFFF;
pub const MANTISSA_BITS: u32 = 23;
/// Smallest positive normal magnitude, as bits.
pub const MIN_NORMAL: u32 = 0x0080_0000;
/// Largest finite magnitude, as bits.
pub const MAX_FINITE: u32 = 0x7F7F_FFFF;

/// A binary32 value seen both as a number and as its sign/exponent/mantissa fields.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloatBits(u32);

impl FloatBits {
    #[inline]
    pub fn new(value: f32) -> Self {
        Self(value.to_bits())
    }

    #[inline]
    pub const fn from_bits(bits: u32) -> Self {
        Self(bits)
    }

    /// Assembles a value from its fields. Out-of-range fields are masked.
    pub const fn from_parts(negative: bool, biased_exponent: u8, mantissa: u32) -> Self {
        let sign = if negative { SIGN_MASK } else { 0 };
        Self(sign | ((biased_exponent as u32) << MANTISSA_BITS) | (mantissa & MANTISSA_MASK))
    }

    #[inline]
    pub fn value(self) -> f32 {
        f32::from_bits(self.0)
    }

    #[inline]
    pub const fn bits(self) -> u32 {
        self.0
    }

    #[inline]
    pub const fn is_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    #[inline]
    pub const fn biased_exponent(self) -> u8 {
        ((self.0 & EXPONENT_MASK) >> MANTISSA_BITS) as u8
    }

    #[inline]
    pub const fn mantissa(self) -> u32 {
        self.0 & MANTISSA_MASK
    }

    #[inline]
    pub const fn magnitude(self) -> Self {
        Self(self.0 & ABS_MASK)
    }

    /// True for finite, nonzero values that are not subnormal.
    #[inline]
    pub const fn is_normal(self) -> bool {
        let e = self.biased_exponent();
        e != 0 && e != 0xFF
    }

    #[inline]
    pub const fn is_positive_normal(self) -> bool {
        !self.is_negative() && self.is_normal()
    }

    /// The fixed-point pseudo-logarithm of a positive normal value.
    pub fn log_domain(self) -> Option<LogFp32> {
        self.is_positive_normal()
            .then(|| LogDomainValue::from_raw(self.0 as i32 - BIAS as i32))
    }
}

impl fmt::Debug for FloatBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FloatBits")
            .field("value", &self.value())
            .field("sign", &(self.is_negative() as u8))
            .field("biased_exponent", &self.biased_exponent())
            .field("mantissa", &format_args!("{:#08x}", self.mantissa()))
            .finish()
    }
}

impl From<f32> for FloatBits {
    fn from(value: f32) -> Self {
        Self::new(value)
    }
}

/// Signed fixed-point number with `FRAC` fractional bits.
///
/// For binary32 this is the integer view of a positive normal value minus the
/// exponent bias, so that adding two of them is exact integer addition.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LogDomainValue<const FRAC: u32>(i32);

/// Log-domain value of the binary32 format (23 fractional bits).
pub type LogFp32 = LogDomainValue<23>;
/// Log-domain value of the bfloat16 format (7 fractional bits).
pub type LogBf16 = LogDomainValue<7>;

impl<const FRAC: u32> LogDomainValue<FRAC> {
    pub const ONE: Self = Self(1 << FRAC);

    #[inline]
    pub const fn from_raw(raw: i32) -> Self {
        Self(raw)
    }

    #[inline]
    pub const fn raw(self) -> i32 {
        self.0
    }

    /// The real number this fixed-point value encodes. Always exact.
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / (1u64 << FRAC) as f64
    }

    /// Halves the value, rounding toward negative infinity.
    #[inline]
    pub const fn halve_floor(self) -> Self {
        Self(self.0 >> 1)
    }

    /// Integer part, rounded toward negative infinity.
    #[inline]
    pub const fn floor(self) -> i32 {
        self.0 >> FRAC
    }
}

impl<const FRAC: u32> Add for LogDomainValue<FRAC> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl<const FRAC: u32> Sub for LogDomainValue<FRAC> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl<const FRAC: u32> Neg for LogDomainValue<FRAC> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl<const FRAC: u32> fmt::Debug for LogDomainValue<FRAC> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogDomainValue({} = {})", self.0, self.to_f64())
    }
}
