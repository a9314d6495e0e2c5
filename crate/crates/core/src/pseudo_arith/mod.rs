//! Addition-as-int: multiplication, division, roots, exponentials and
//! logarithms of binary32 values computed by integer arithmetic on their bit
//! patterns.
//!
//! Reading a positive normal float's bits as an integer and subtracting the
//! exponent bias `0x3F80_0000` yields `l(x) * 2^23`, where `l` is the
//! piecewise-linear pseudo-logarithm ([`l_ref`]). Adding two such integers
//! and reinterpreting the sum as a float evaluates `e(l(a) + l(b))`, with `e`
//! the matching pseudo-exponential ([`e_ref`]). That is the e-mult
//! ([`int_mul`]): exact whenever one operand is a power of two, and never
//! more than 1/9 below the true product.
//!
//! The e-operations treat these functions as exact operations with exact
//! derivatives ([`d_e_mult`]). The a-operations ([`GammaCorrection`]) add the
//! mean gap γ between `log2` and `l` in the log domain to approximate true
//! arithmetic.
//!
//! Signs are handled separately from magnitudes, subnormals flush to zero,
//! exponent underflow rounds to signed zero and overflow saturates.

mod approx;
pub mod bits;
pub mod kernel;
mod reference;

pub use approx::{a_div, a_exp2, a_log2, a_mult, a_sqrt, gamma, GammaCorrection};
pub use bits::{FloatBits, LogBf16, LogDomainValue, LogFp32, BIAS};
pub use reference::{e_prime_ref, e_ref, l_prime_ref, l_ref};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ArithError {
    #[error("operand {0} is not finite")]
    NonFinite(f32),
    #[error("operand {0} is not positive")]
    NotPositive(f32),
    #[error("operand {0} is not a positive normal number")]
    NotPositiveNormal(f32),
    #[error("operand {0} is negative")]
    Negative(f32),
    #[error("division by zero")]
    DivisionByZero,
}

pub(crate) fn check_finite(x: f32) -> Result<(), ArithError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ArithError::NonFinite(x))
    }
}

pub(crate) fn check_divisor(b: f32) -> Result<(), ArithError> {
    check_finite(b)?;
    if FloatBits::new(b).is_normal() {
        Ok(())
    } else {
        Err(ArithError::DivisionByZero)
    }
}

pub(crate) fn check_positive(x: f32) -> Result<(), ArithError> {
    check_finite(x)?;
    if x <= 0.0 {
        Err(ArithError::NotPositive(x))
    } else if !FloatBits::new(x).is_normal() {
        Err(ArithError::NotPositiveNormal(x))
    } else {
        Ok(())
    }
}

/// The e-mult `e(l|a| + l|b|)`, signed by the XOR of the operand signs.
///
/// For same-sign normal operands whose product neither underflows nor
/// overflows this is bit-identical to `bits(a) + bits(b) - 0x3F80_0000`.
pub fn int_mul(a: f32, b: f32) -> Result<f32, ArithError> {
    check_finite(a)?;
    check_finite(b)?;
    Ok(kernel::int_mul(a, b))
}

/// `l(x)` as a fixed-point value: `bits(x) - 0x3F80_0000`.
pub fn to_log_domain(x: f32) -> Result<LogFp32, ArithError> {
    check_positive(x)?;
    Ok(FloatBits::new(x).log_domain().expect("checked positive normal"))
}

/// `e(q)`: adds the bias back and reinterprets. Results outside the normal
/// range round to zero or saturate.
pub fn from_log_domain(q: LogFp32) -> f32 {
    kernel::log_exp2(0.0, q.raw())
}

/// The e-div `e(l|a| - l|b|)`; exact inverse of [`int_mul`] when nothing clamps.
pub fn e_div(a: f32, b: f32) -> Result<f32, ArithError> {
    check_finite(a)?;
    check_divisor(b)?;
    Ok(kernel::log_div(a, b, 0))
}

/// The e-sqrt `e(floor(l(x) / 2))`, halving the fixed-point value with an
/// arithmetic shift. Exact for even powers of two.
pub fn e_sqrt(x: f32) -> Result<f32, ArithError> {
    check_finite(x)?;
    if x < 0.0 {
        return Err(ArithError::Negative(x));
    }
    Ok(kernel::log_sqrt(x, 0))
}

/// The e-exp `e(x)`. Bits of `x` below `2^-23` are floored away.
pub fn e_exp2(x: f32) -> Result<f32, ArithError> {
    check_finite(x)?;
    Ok(kernel::log_exp2(x, 0))
}

/// The e-log `l(x)`, rounded to the nearest binary32.
pub fn e_log2(x: f32) -> Result<f32, ArithError> {
    check_positive(x)?;
    Ok(kernel::log_log2(x, 0))
}

/// `e'(x) = 2^floor(x)`.
pub fn e_prime(x: f32) -> Result<f32, ArithError> {
    check_finite(x)?;
    Ok(kernel::e_prime(x))
}

/// `l'(x) = 2^-floor(log2 x)`.
pub fn l_prime(x: f32) -> Result<f32, ArithError> {
    check_positive(x)?;
    Ok(kernel::l_prime(x))
}

/// Gradients of `f(a, b) = int_mul(a, b)`: `da = upstream * sign(b) *
/// e'(l|a| + l|b|) * l'(|a|)` and symmetrically for `db`.
///
/// Derivatives at kinks are right derivatives. The scalings by `e'` and `l'`
/// are powers of two, applied with [`int_mul`] and therefore exact.
pub fn d_e_mult(a: f32, b: f32, upstream: f32) -> Result<(f32, f32), ArithError> {
    check_finite(a)?;
    check_finite(b)?;
    check_finite(upstream)?;
    Ok((kernel::e_mult_grad(a, b, upstream), kernel::e_mult_grad(b, a, upstream)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_mul_examples() {
        assert_eq!(int_mul(1.5, 1.5).unwrap(), 2.0);
        assert_eq!(int_mul(1.0, 3.7).unwrap(), 3.7);
        assert_eq!(int_mul(-4.0, 3.0).unwrap(), -12.0);
        assert_eq!(int_mul(1e-38, 1e-38).unwrap(), 0.0);
        assert_eq!(int_mul(-0.0, 5.0).unwrap().to_bits(), (-0.0f32).to_bits());
        assert_eq!(int_mul(-0.0, -5.0).unwrap().to_bits(), 0);
        assert_eq!(int_mul(3e38, -4.0).unwrap(), -f32::MAX);
    }

    #[test]
    fn int_mul_rejects_non_finite() {
        assert_eq!(int_mul(f32::NAN, 1.0).unwrap_err().to_string(), "operand NaN is not finite");
        assert!(int_mul(1.0, f32::INFINITY).is_err());
        assert!(int_mul(f32::NEG_INFINITY, 0.0).is_err());
    }

    #[test]
    fn log_domain_examples() {
        assert_eq!(to_log_domain(1.0).unwrap().raw(), 0);
        assert_eq!(to_log_domain(2.0).unwrap().raw(), 1 << 23);
        assert_eq!(to_log_domain(1.5).unwrap().raw(), 1 << 22);
        assert_eq!(from_log_domain(LogFp32::from_raw(0)), 1.0);
        assert_eq!(from_log_domain(LogFp32::from_raw(1 << 22)), 1.5);
        assert_eq!(from_log_domain(LogFp32::from_raw(-(1 << 23))), 0.5);
        assert_eq!(from_log_domain(LogFp32::from_raw(-200 << 23)), 0.0);
        assert_eq!(from_log_domain(LogFp32::from_raw(200 << 23)), f32::MAX);
    }

    #[test]
    fn log_domain_rejects() {
        assert_eq!(to_log_domain(0.0), Err(ArithError::NotPositive(0.0)));
        assert_eq!(to_log_domain(-2.0), Err(ArithError::NotPositive(-2.0)));
        assert!(matches!(to_log_domain(1e-40), Err(ArithError::NotPositiveNormal(_))));
        assert!(matches!(to_log_domain(f32::NAN), Err(ArithError::NonFinite(_))));
        assert!(to_log_domain(f32::INFINITY).is_err());
    }

    #[test]
    fn e_div_examples() {
        assert_eq!(e_div(3.0, 2.0).unwrap(), 1.5);
        let p = int_mul(1.7, 1.3).unwrap();
        assert_eq!(e_div(p, 1.3).unwrap(), 1.7);
        assert_eq!(e_div(1.0, 1.5).unwrap(), 0.75);
        assert_eq!(e_div(-3.0, 2.0).unwrap(), -1.5);
        assert_eq!(e_div(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(e_div(1.0, 0.0), Err(ArithError::DivisionByZero));
        assert_eq!(e_div(1.0, -0.0), Err(ArithError::DivisionByZero));
    }

    #[test]
    fn e_sqrt_examples() {
        assert_eq!(e_sqrt(4.0).unwrap(), 2.0);
        assert_eq!(e_sqrt(1.0).unwrap(), 1.0);
        assert_eq!(e_sqrt(2.0).unwrap(), 1.5);
        assert_eq!(e_sqrt(0.0).unwrap(), 0.0);
        assert_eq!(e_sqrt(0.25).unwrap(), 0.5);
        // odd exponent below one: l(0.5) = -1, halved to -0.5
        assert_eq!(e_sqrt(0.5).unwrap(), 0.75);
        assert_eq!(e_sqrt(-1.0), Err(ArithError::Negative(-1.0)));
    }

    #[test]
    fn exp_log_examples() {
        assert_eq!(e_exp2(3.0).unwrap(), 8.0);
        assert_eq!(e_log2(8.0).unwrap(), 3.0);
        assert_eq!(e_log2(3.0).unwrap(), 1.5);
        assert_eq!(e_exp2(-0.5).unwrap(), 0.75);
        assert!(e_log2(0.0).is_err());
        assert!(e_log2(-1.0).is_err());
        assert!(e_exp2(f32::NAN).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(e_prime(0.5).unwrap(), 1.0);
        assert_eq!(e_prime(1.5).unwrap(), 2.0);
        assert_eq!(l_prime(3.0).unwrap(), 0.5);
        assert!(l_prime(0.0).is_err());
    }

    #[test]
    fn d_e_mult_examples() {
        assert_eq!(d_e_mult(1.5, 1.5, 1.0).unwrap(), (2.0, 2.0));
        for a in [1.0f32, 1.25, 1.5, 1.999] {
            assert_eq!(d_e_mult(a, 1.0, 1.0).unwrap().0, 1.0);
        }
        // a = 2 sits on a kink of l; the right derivative is 2 (left is 4).
        assert_eq!(d_e_mult(2.0, 3.0, 1.0).unwrap(), (2.0, 2.0));
        assert_eq!(d_e_mult(-1.5, 1.5, 0.5).unwrap(), (1.0, -1.0));
        assert!(d_e_mult(1.0, 1.0, f32::NAN).is_err());
    }

    #[test]
    fn d_e_mult_matches_composed_definition() {
        // da = upstream * sign(b) * e'(l|a| + l|b|) * l'(|a|), each factor
        // evaluated from the reference functions.
        let cases = [(1.3f32, 2.7f32, 0.7f32), (0.3, -5.5, 1.25), (-7.9, 0.011, -3.0), (100.0, 0.9, 2.0)];
        for (a, b, up) in cases {
            let s = l_ref(a.abs() as f64).unwrap() + l_ref(b.abs() as f64).unwrap();
            let expected = up as f64 * b.signum() as f64 * e_prime_ref(s) * l_prime_ref(a.abs() as f64).unwrap();
            assert_eq!(d_e_mult(a, b, up).unwrap().0 as f64, expected, "{a} {b}");
        }
    }
}
