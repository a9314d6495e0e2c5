//! Infallible bit-level kernels used on tensor hot paths.
//!
//! Inputs are assumed finite (tensors keep that invariant). Subnormal operands
//! are flushed to zero, exponent underflow rounds to signed zero and overflow
//! saturates to the largest finite magnitude, so the kernels never produce a
//! NaN or an infinity. The checked wrappers in the parent module add the
//! domain errors.
//!
//! `offset` arguments are log-domain offsets in units of 2^-23 (the γ
//! correction of the a-operations, or zero for the e-operations). They must
//! stay below 2^24 in magnitude.

use super::bits::{ABS_MASK, BIAS, EXPONENT_MASK, MANTISSA_MASK, MAX_FINITE, MIN_NORMAL, SIGN_MASK};

const FRAC_SCALE: f64 = (1u64 << 23) as f64;

/// Magnitude bits for a log-domain value `q` (23 fractional bits), with
/// round-to-zero on underflow and saturation on overflow.
#[inline(always)]
fn magnitude_from_log(q: i64) -> u32 {
    let biased = q + BIAS as i64;
    if biased < MIN_NORMAL as i64 {
        0
    } else if biased > MAX_FINITE as i64 {
        MAX_FINITE
    } else {
        biased as u32
    }
}

/// Log-domain value of `|x|`, or `None` for zero and subnormals.
#[inline(always)]
fn log_of_magnitude(x: f32) -> Option<i64> {
    let m = x.to_bits() & ABS_MASK;
    (m >= MIN_NORMAL).then(|| m as i64 - BIAS as i64)
}

/// `e(l(|a|) + l(|b|) + offset)` with the XOR of the signs.
///
/// Written with 32-bit integer operations and selects only, so loops over it
/// vectorize.
#[inline(always)]
pub fn log_mul(a: f32, b: f32, offset: i32) -> f32 {
    let ua = a.to_bits();
    let ub = b.to_bits();
    let sign = (ua ^ ub) & SIGN_MASK;
    let ma = ua & ABS_MASK;
    let mb = ub & ABS_MASK;
    // Both magnitudes are at most 0x7FFF_FFFF, so the sum fits in a u32.
    let t = ma.wrapping_add(mb).wrapping_add(offset as u32);
    let flushed = ma < MIN_NORMAL || mb < MIN_NORMAL;
    let mag = if flushed || t < BIAS + MIN_NORMAL {
        0
    } else if t > BIAS + MAX_FINITE {
        MAX_FINITE
    } else {
        t - BIAS
    };
    f32::from_bits(sign | mag)
}

/// Addition-as-int: the e-mult kernel.
#[inline(always)]
pub fn int_mul(a: f32, b: f32) -> f32 {
    log_mul(a, b, 0)
}

/// `e(l(|a|) - l(|b|) + offset)` with the XOR of the signs. A zero divisor
/// saturates.
#[inline]
pub fn log_div(a: f32, b: f32, offset: i32) -> f32 {
    let sign = (a.to_bits() ^ b.to_bits()) & SIGN_MASK;
    let mag = match (log_of_magnitude(a), log_of_magnitude(b)) {
        (None, _) => 0,
        (Some(_), None) => MAX_FINITE,
        (Some(qa), Some(qb)) => magnitude_from_log(qa - qb + offset as i64),
    };
    f32::from_bits(sign | mag)
}

/// Halves the log-domain value (after subtracting `offset`), rounding toward
/// negative infinity. Nonpositive inputs give zero.
#[inline]
pub fn log_sqrt(x: f32, offset: i32) -> f32 {
    if x <= 0.0 {
        return 0.0;
    }
    match log_of_magnitude(x) {
        None => 0.0,
        Some(q) => f32::from_bits(magnitude_from_log((q - offset as i64) >> 1)),
    }
}

/// `e(x)` plus `offset`: the fixed-point value `floor(x * 2^23)` reinterpreted
/// as a float.
#[inline]
pub fn log_exp2(x: f32, offset: i32) -> f32 {
    let q = (x as f64 * FRAC_SCALE).floor() as i64;
    f32::from_bits(magnitude_from_log(q + offset as i64))
}

/// `l(x)` plus `offset`, read back as a float (rounded to nearest).
/// Zero and subnormal inputs are treated as the smallest normal.
#[inline]
pub fn log_log2(x: f32, offset: i32) -> f32 {
    let m = (x.to_bits() & ABS_MASK).max(MIN_NORMAL);
    let q = m as i64 - BIAS as i64 + offset as i64;
    (q as f64 / FRAC_SCALE) as f32
}

/// Derivative of `e` at `x`, `2^floor(x)`: the pseudo-exponential with its
/// mantissa zeroed.
#[inline]
pub fn e_prime(x: f32) -> f32 {
    f32::from_bits(log_exp2(x, 0).to_bits() & EXPONENT_MASK)
}

/// Derivative of `l` at `|x|`, `2^-floor(log2 |x|)`: mantissa zeroed and the
/// unbiased exponent negated. Zero when the result would be subnormal; a
/// zero input saturates to 2^127.
#[inline]
pub fn l_prime(x: f32) -> f32 {
    let m = x.to_bits() & ABS_MASK;
    if m < MIN_NORMAL {
        return f32::from_bits(MAX_FINITE & EXPONENT_MASK);
    }
    let biased = (m & EXPONENT_MASK) >> 23;
    let negated = 254 - biased;
    f32::from_bits(negated << 23)
}

/// The factor `sign(co) * e'(l|own| + l|co|) * l'(|own|)` of the e-mult
/// gradient with respect to `own`. Always a signed power of two, or zero.
///
/// Since the floor of the log sum is `E_own + E_co + carry`, the factor
/// reduces to `2^(E_co + carry)` where `carry` is the mantissa carry of the
/// integer add. It is zero where the forward product is clamped. At
/// `own == 0` the mantissa of `own` is taken as zero, giving `2^E_co`.
#[inline(always)]
pub fn e_mult_grad_scale(own: f32, co: f32) -> f32 {
    let uo = own.to_bits();
    let uc = co.to_bits();
    let mo = uo & ABS_MASK;
    let mc = uc & ABS_MASK;
    let sign = uc & SIGN_MASK;
    let carry = ((mo & MANTISSA_MASK) + (mc & MANTISSA_MASK)) & (1 << 23);
    let t = mo.wrapping_add(mc);
    let scale = (mc & EXPONENT_MASK).wrapping_add(carry);
    let mag = if mc < MIN_NORMAL {
        0
    } else if mo < MIN_NORMAL {
        mc & EXPONENT_MASK
    } else if t < BIAS + MIN_NORMAL || t > BIAS + MAX_FINITE {
        0
    } else if scale > MAX_FINITE {
        MAX_FINITE & EXPONENT_MASK
    } else {
        scale
    };
    f32::from_bits(sign | mag)
}

/// Gradient of the e-mult with respect to `own`, given the upstream gradient.
/// The scaling by a power of two is itself done with [`int_mul`].
#[inline(always)]
pub fn e_mult_grad(own: f32, co: f32, upstream: f32) -> f32 {
    int_mul(upstream, e_mult_grad_scale(own, co))
}
