//! Real-valued piecewise-linear pseudo-logarithm and pseudo-exponential.
//!
//! These are computed with ordinary `f64` arithmetic and never look at bit
//! patterns, so they serve as oracles for the bit-level kernels. For inputs
//! that come from binary32 values every step here is exact in `f64`.

use super::ArithError;

/// `2^k` for integer `k`, exact for the whole `f64` exponent range we use.
fn pow2(k: i32) -> f64 {
    2f64.powi(k)
}

/// Largest integer `k` with `2^k <= x`, for `x > 0`.
fn octave(x: f64) -> i32 {
    let mut k = x.log2().floor() as i32;
    while pow2(k) > x {
        k -= 1;
    }
    while pow2(k + 1) <= x {
        k += 1;
    }
    k
}

/// Piecewise-linear base-2 pseudo-logarithm: `x - 1` on `[1, 2)`, and
/// `l(2x) = l(x) + 1` elsewhere.
pub fn l_ref(x: f64) -> Result<f64, ArithError> {
    if !x.is_finite() {
        return Err(ArithError::NonFinite(x as f32));
    }
    if x <= 0.0 {
        return Err(ArithError::NotPositive(x as f32));
    }
    let k = octave(x);
    Ok(k as f64 + (x / pow2(k) - 1.0))
}

/// Piecewise-linear base-2 pseudo-exponential: `1 + x` on `[0, 1)`, and
/// `e(x + 1) = 2 e(x)` elsewhere. Inverse of [`l_ref`].
pub fn e_ref(x: f64) -> f64 {
    let k = x.floor();
    pow2(k as i32) * (1.0 + (x - k))
}

/// Derivative of [`e_ref`], right-continuous at the integers.
pub fn e_prime_ref(x: f64) -> f64 {
    pow2(x.floor() as i32)
}

/// Derivative of [`l_ref`], right-continuous at the powers of two.
pub fn l_prime_ref(x: f64) -> Result<f64, ArithError> {
    if x <= 0.0 {
        return Err(ArithError::NotPositive(x as f32));
    }
    Ok(pow2(-octave(x)))
}
