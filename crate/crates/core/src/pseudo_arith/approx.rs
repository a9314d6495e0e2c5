//! a-operations: addition-as-int used as an approximation of true arithmetic,
//! corrected by the average gap γ between `log2` and the pseudo-logarithm.

use super::kernel;
use super::{check_divisor, check_finite, check_positive, ArithError};

/// `∫_1^2 (log2 x - (x - 1)) dx = 3/2 - 1/ln 2`.
pub fn gamma() -> f64 {
    1.5 - std::f64::consts::LOG2_E
}

/// The γ offset, both as a real number and rounded to the log-domain grid.
///
/// `multiplier` scales γ before rounding; the a-operations apply a single
/// offset by default (multiplier 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaCorrection {
    multiplier: f64,
    real: f64,
    fixed: i32,
    frac_bits: u32,
}

impl Default for GammaCorrection {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl GammaCorrection {
    /// γ for the binary32 log domain (23 fractional bits).
    pub fn new(multiplier: f64) -> Self {
        Self::with_frac_bits(multiplier, 23)
    }

    /// γ rounded to nearest at `2^-frac_bits` resolution.
    ///
    /// # Panics
    /// If the scaled offset does not fit in one octave of the log domain
    /// (`|multiplier * γ| >= 1`) or is not finite.
    pub fn with_frac_bits(multiplier: f64, frac_bits: u32) -> Self {
        let real = multiplier * gamma();
        assert!(real.is_finite() && real.abs() < 1.0, "gamma multiplier {multiplier} out of range");
        let fixed = (real * (1u64 << frac_bits) as f64).round() as i32;
        Self { multiplier, real, fixed, frac_bits }
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    /// The unrounded offset `multiplier * γ`.
    pub fn real(&self) -> f64 {
        self.real
    }

    /// The offset in units of `2^-frac_bits`.
    pub fn fixed(&self) -> i32 {
        self.fixed
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// Offset in binary32 log-domain units, whatever the format it was made for.
    pub(crate) fn fp32_offset(&self) -> i32 {
        self.fixed << (23 - self.frac_bits)
    }

    /// a-mult: `e(l|a| + l|b| + γ)` with the sign rules of int_mul.
    pub fn a_mult(&self, a: f32, b: f32) -> Result<f32, ArithError> {
        check_finite(a)?;
        check_finite(b)?;
        Ok(kernel::log_mul(a, b, self.fp32_offset()))
    }

    /// a-div: `e(l|a| - l|b| - γ)`.
    pub fn a_div(&self, a: f32, b: f32) -> Result<f32, ArithError> {
        check_finite(a)?;
        check_divisor(b)?;
        Ok(kernel::log_div(a, b, -self.fp32_offset()))
    }

    /// a-log2: `l(x) + γ`.
    pub fn a_log2(&self, x: f32) -> Result<f32, ArithError> {
        check_positive(x)?;
        Ok(kernel::log_log2(x, self.fp32_offset()))
    }

    /// a-exp2: `e(x + γ)`.
    pub fn a_exp2(&self, x: f32) -> Result<f32, ArithError> {
        check_finite(x)?;
        Ok(kernel::log_exp2(x, self.fp32_offset()))
    }

    /// a-sqrt: `e((l(x) - γ) / 2)`, so that the result's own `l → log2` bias
    /// of γ restores an unbiased estimate. Halving rounds down.
    pub fn a_sqrt(&self, x: f32) -> Result<f32, ArithError> {
        check_finite(x)?;
        if x < 0.0 {
            return Err(ArithError::Negative(x));
        }
        Ok(kernel::log_sqrt(x, self.fp32_offset()))
    }
}

/// a-mult with the default single γ.
pub fn a_mult(a: f32, b: f32) -> Result<f32, ArithError> {
    GammaCorrection::default().a_mult(a, b)
}

pub fn a_div(a: f32, b: f32) -> Result<f32, ArithError> {
    GammaCorrection::default().a_div(a, b)
}

pub fn a_log2(x: f32) -> Result<f32, ArithError> {
    GammaCorrection::default().a_log2(x)
}

pub fn a_exp2(x: f32) -> Result<f32, ArithError> {
    GammaCorrection::default().a_exp2(x)
}

pub fn a_sqrt(x: f32) -> Result<f32, ArithError> {
    GammaCorrection::default().a_sqrt(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo_arith::{e_ref, int_mul, l_ref};
    use approx::assert_relative_eq;

    #[test]
    fn gamma_value_and_bounds() {
        let g = gamma();
        assert!((g as f32 - (1.5f32 - 1.0 / std::f32::consts::LN_2)).abs() <= f32::EPSILON);
        assert!(g > 0.0 && g < 0.0861);
        // 0.0573049591... * 2^23 = 480708.84
        assert_eq!(GammaCorrection::default().fixed(), 480_709);
        assert_eq!(GammaCorrection::with_frac_bits(1.0, 7).fixed(), 7);
    }

    #[test]
    fn a_mult_examples() {
        let g = GammaCorrection::default();
        let gq = g.fixed() as f64 / (1u64 << 23) as f64;
        assert_eq!(a_mult(1.0, 1.0).unwrap() as f64, e_ref(gq));
        assert_relative_eq!(a_mult(1.0, 1.0).unwrap(), 1.0573, epsilon = 1e-4);
        assert_eq!(a_mult(1.5, 1.5).unwrap() as f64, e_ref(1.0 + gq));
        assert_relative_eq!(a_mult(1.5, 1.5).unwrap(), 2.1146, epsilon = 1e-4);
        assert_eq!(a_mult(-1.5, 1.5).unwrap(), -a_mult(1.5, 1.5).unwrap());
        assert_eq!(a_mult(0.0, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn a_log2_of_one_is_gamma() {
        assert_relative_eq!(a_log2(1.0).unwrap() as f64, gamma(), epsilon = 1e-7);
        assert_relative_eq!(a_exp2(0.0).unwrap(), 1.0 + gamma() as f32, epsilon = 1e-6);
    }

    #[test]
    fn a_div_undoes_a_mult_offset() {
        // a_div(a_mult(a, b), b) removes two offsets' worth of the single γ.
        let (a, b) = (1.3f32, 1.7f32);
        let q = l_ref(a as f64).unwrap() + l_ref(b as f64).unwrap();
        let m = a_mult(a, b).unwrap();
        assert_eq!(l_ref(m as f64).unwrap(), q + GammaCorrection::default().fixed() as f64 / 8388608.0);
        let back = a_div(m, b).unwrap();
        assert_eq!(back, a);
        assert!(a_div(1.0, 0.0).is_err());
    }

    #[test]
    fn gamma_multiplier_composes() {
        let one = GammaCorrection::new(1.0);
        let three = GammaCorrection::new(3.0);
        let q1 = l_ref(one.a_mult(1.25, 1.25).unwrap() as f64).unwrap();
        let q3 = l_ref(three.a_mult(1.25, 1.25).unwrap() as f64).unwrap();
        assert_relative_eq!(q3 - q1, 2.0 * gamma(), epsilon = 1e-6);
        assert!(int_mul(1.25, 1.25).unwrap() < one.a_mult(1.25, 1.25).unwrap());
    }

    #[test]
    #[should_panic]
    fn rejects_huge_multiplier() {
        GammaCorrection::new(100.0);
    }

    #[test]
    fn a_sqrt_of_nonnegative() {
        assert_eq!(a_sqrt(0.0).unwrap(), 0.0);
        assert!(a_sqrt(-1.0).is_err());
        let r = a_sqrt(4.0).unwrap();
        assert!(r < 2.0 && r > 1.9);
    }
}
