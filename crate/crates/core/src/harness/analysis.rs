use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::precision::{quantize, Bf16, NumberFormat, RoundingMode};
use crate::pseudo_arith::{kernel, l_ref, GammaCorrection};
use crate::precision::bf16::log_mul_bits;

use super::HarnessError;

/// Smallest accepted grid resolution (points per mantissa axis).
pub const MIN_RESOLUTION: usize = 16;
/// bfloat16 has 7 mantissa bits, so finer grids would only repeat points.
pub const MAX_BF16_RESOLUTION: usize = 128;

/// One grid point: operands in `[1, 2)` and both approximate products.
#[derive(Debug, Clone, Copy)]
pub struct ErrorCell {
    pub a: f32,
    pub b: f32,
    pub int_mul: f32,
    pub a_mult: f32,
}

impl ErrorCell {
    pub fn exact(&self) -> f64 {
        self.a as f64 * self.b as f64
    }

    /// `(ab − f) / ab` for the int_mul result `f`.
    pub fn int_mul_rel_error(&self) -> f64 {
        (self.exact() - self.int_mul as f64) / self.exact()
    }

    /// `(ab − f) / f`: the same gap relative to the approximate product.
    pub fn int_mul_rel_error_of_result(&self) -> f64 {
        (self.exact() - self.int_mul as f64) / self.int_mul as f64
    }

    /// `(fa − ab) / ab` for the a_mult result `fa`.
    pub fn a_mult_rel_error(&self) -> f64 {
        (self.a_mult as f64 - self.exact()) / self.exact()
    }

    /// `l(f) − log2(ab)`: the result's pseudo-log against the true log.
    pub fn int_mul_log_bias(&self) -> f64 {
        log_bias(self.int_mul, self.exact())
    }

    pub fn a_mult_log_bias(&self) -> f64 {
        log_bias(self.a_mult, self.exact())
    }
}

fn log_bias(result: f32, exact: f64) -> f64 {
    l_ref(result as f64).expect("products of [1, 2) operands are positive normal") - exact.log2()
}

/// Aggregates over a sweep or sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorSummary {
    pub cells: usize,
    pub int_mul_max_rel_error: f64,
    pub int_mul_max_rel_error_of_result: f64,
    pub int_mul_mean_rel_error: f64,
    pub a_mult_max_abs_rel_error: f64,
    pub a_mult_mean_abs_rel_error: f64,
    /// Mean of `l(f) − log2(ab)`.
    pub int_mul_mean_log_bias: f64,
    pub a_mult_mean_log_bias: f64,
    /// Mean of `log2(f) − log2(ab)`.
    pub int_mul_mean_value_bias: f64,
    pub a_mult_mean_value_bias: f64,
    /// `int_mul(a, b) <= ab` at every cell.
    pub int_mul_never_overestimates: bool,
    /// int_mul is exact at a cell iff one operand has a zero mantissa.
    pub int_mul_exact_iff_zero_mantissa: bool,
}

impl ErrorSummary {
    fn from_cells(cells: &[ErrorCell]) -> Self {
        let n = cells.len() as f64;
        let mut s = ErrorSummary {
            cells: cells.len(),
            int_mul_never_overestimates: true,
            int_mul_exact_iff_zero_mantissa: true,
            ..Default::default()
        };
        for c in cells {
            let r = c.int_mul_rel_error();
            let ra = c.a_mult_rel_error().abs();
            s.int_mul_max_rel_error = s.int_mul_max_rel_error.max(r);
            s.int_mul_max_rel_error_of_result = s.int_mul_max_rel_error_of_result.max(c.int_mul_rel_error_of_result());
            s.int_mul_mean_rel_error += r / n;
            s.a_mult_max_abs_rel_error = s.a_mult_max_abs_rel_error.max(ra);
            s.a_mult_mean_abs_rel_error += ra / n;
            s.int_mul_mean_log_bias += c.int_mul_log_bias() / n;
            s.a_mult_mean_log_bias += c.a_mult_log_bias() / n;
            s.int_mul_mean_value_bias += ((c.int_mul as f64).log2() - c.exact().log2()) / n;
            s.a_mult_mean_value_bias += ((c.a_mult as f64).log2() - c.exact().log2()) / n;
            s.int_mul_never_overestimates &= c.int_mul as f64 <= c.exact();
            let zero_line = c.a == 1.0 || c.b == 1.0;
            s.int_mul_exact_iff_zero_mantissa &= (c.int_mul as f64 == c.exact()) == zero_line;
        }
        s
    }
}

impl fmt::Display for ErrorSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cells                              {}", self.cells)?;
        writeln!(f, "int_mul max (ab-f)/ab              {:.6}", self.int_mul_max_rel_error)?;
        writeln!(f, "int_mul max (ab-f)/f               {:.6}", self.int_mul_max_rel_error_of_result)?;
        writeln!(f, "int_mul mean (ab-f)/ab             {:.6}", self.int_mul_mean_rel_error)?;
        writeln!(f, "a_mult max |fa-ab|/ab              {:.6}", self.a_mult_max_abs_rel_error)?;
        writeln!(f, "a_mult mean |fa-ab|/ab             {:.6}", self.a_mult_mean_abs_rel_error)?;
        writeln!(f, "int_mul mean l(f)-log2(ab)         {:+.6}", self.int_mul_mean_log_bias)?;
        writeln!(f, "a_mult mean l(fa)-log2(ab)         {:+.6}", self.a_mult_mean_log_bias)?;
        writeln!(f, "int_mul mean log2(f)-log2(ab)      {:+.6}", self.int_mul_mean_value_bias)?;
        writeln!(f, "a_mult mean log2(fa)-log2(ab)      {:+.6}", self.a_mult_mean_value_bias)?;
        writeln!(f, "int_mul never overestimates        {}", self.int_mul_never_overestimates)?;
        write!(f, "int_mul exact iff zero mantissa    {}", self.int_mul_exact_iff_zero_mantissa)
    }
}

/// Grid sweep of the approximate multipliers.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub resolution: usize,
    pub format: NumberFormat,
    pub gamma_multiplier: f64,
    /// Row-major over (first mantissa, second mantissa).
    pub cells: Vec<ErrorCell>,
    pub summary: ErrorSummary,
}

impl ErrorReport {
    /// One CSV row per cell.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "a,b,exact,int_mul,a_mult,int_mul_rel_error,int_mul_rel_error_of_result,a_mult_rel_error,int_mul_log_bias,a_mult_log_bias"
        )?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
                c.a,
                c.b,
                c.exact(),
                c.int_mul,
                c.a_mult,
                c.int_mul_rel_error(),
                c.int_mul_rel_error_of_result(),
                c.a_mult_rel_error(),
                c.int_mul_log_bias(),
                c.a_mult_log_bias()
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let format = match self.format {
            NumberFormat::Fp32 => "fp32",
            NumberFormat::Bf16 => "bf16",
        };
        writeln!(f, "grid {0}x{0} ({format}), gamma multiplier {1}", self.resolution, self.gamma_multiplier)?;
        write!(f, "{}", self.summary)
    }
}

/// The two products of `a` and `b` in `format`, with the a-mult offset
/// `gamma` (its fraction width must match the format).
fn products(format: NumberFormat, gamma: &GammaCorrection, a: f32, b: f32) -> (f32, f32) {
    match format {
        NumberFormat::Fp32 => (kernel::int_mul(a, b), kernel::log_mul(a, b, gamma.fixed())),
        NumberFormat::Bf16 => {
            let (ba, bb) = ((a.to_bits() >> 16) as u16, (b.to_bits() >> 16) as u16);
            let widen = |x: u16| Bf16::from_bits(x).to_f32();
            (widen(log_mul_bits(ba, bb, 0)), widen(log_mul_bits(ba, bb, gamma.fixed())))
        }
    }
}

fn format_gamma(format: NumberFormat, multiplier: f64) -> Result<GammaCorrection, HarnessError> {
    if multiplier.is_nan() || (multiplier * crate::pseudo_arith::gamma()).abs() >= 1.0 {
        return Err(HarnessError::Analysis(format!("gamma multiplier {multiplier} out of range")));
    }
    Ok(match format {
        NumberFormat::Fp32 => GammaCorrection::new(multiplier),
        NumberFormat::Bf16 => GammaCorrection::with_frac_bits(multiplier, 7),
    })
}

/// Sweeps operand pairs `(1 + i/N, 1 + j/N)` for `0 <= i, j < N` (rounded to
/// `format`), comparing int_mul and a_mult (γ scaled by `gamma_multiplier`)
/// with the true product. `N` must be at least [`MIN_RESOLUTION`] and, for
/// bfloat16, at most [`MAX_BF16_RESOLUTION`].
pub fn analyze_error(resolution: usize, gamma_multiplier: f64, format: NumberFormat) -> Result<ErrorReport, HarnessError> {
    if resolution < MIN_RESOLUTION {
        return Err(HarnessError::Analysis(format!("resolution {resolution} is below {MIN_RESOLUTION}")));
    }
    if format == NumberFormat::Bf16 && resolution > MAX_BF16_RESOLUTION {
        return Err(HarnessError::Analysis(format!("bf16 resolution is at most {MAX_BF16_RESOLUTION}")));
    }
    let gamma = format_gamma(format, gamma_multiplier)?;
    let grid: Vec<f32> = (0..resolution)
        .map(|i| {
            let x = (1.0 + i as f64 / resolution as f64) as f32;
            match format {
                NumberFormat::Fp32 => x,
                NumberFormat::Bf16 => quantize(x, RoundingMode::NearestEven),
            }
        })
        .collect();
    let mut cells = Vec::with_capacity(resolution * resolution);
    for &a in &grid {
        for &b in &grid {
            let (int_mul, a_mult) = products(format, &gamma, a, b);
            cells.push(ErrorCell { a, b, int_mul, a_mult });
        }
    }
    let summary = ErrorSummary::from_cells(&cells);
    Ok(ErrorReport { resolution, format, gamma_multiplier, cells, summary })
}

/// Mean biases over `samples` random pairs with mantissas uniform in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasReport {
    pub samples: usize,
    /// Mean of `l(int_mul(a, b)) − log2(ab)`.
    pub int_mul_log_bias: f64,
    /// Mean of `l(a_mult(a, b)) − log2(ab)`.
    pub a_mult_log_bias: f64,
    /// Mean of `log2(int_mul(a, b)) − log2(ab)`.
    pub int_mul_value_bias: f64,
    pub a_mult_value_bias: f64,
}

impl fmt::Display for BiasReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples                            {}", self.samples)?;
        writeln!(f, "int_mul mean l(f)-log2(ab)         {:+.6}", self.int_mul_log_bias)?;
        writeln!(f, "a_mult mean l(fa)-log2(ab)         {:+.6}", self.a_mult_log_bias)?;
        writeln!(f, "int_mul mean log2(f)-log2(ab)      {:+.6}", self.int_mul_value_bias)?;
        write!(f, "a_mult mean log2(fa)-log2(ab)      {:+.6}", self.a_mult_value_bias)
    }
}

/// Monte-Carlo estimate of the log-domain and value biases of int_mul and
/// a_mult in binary32.
pub fn monte_carlo_bias(samples: usize, seed: u64, gamma_multiplier: f64) -> Result<BiasReport, HarnessError> {
    let gamma = format_gamma(NumberFormat::Fp32, gamma_multiplier)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut li, mut la, mut vi, mut va) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let a = 1.0 + rng.gen::<f32>();
        let b = 1.0 + rng.gen::<f32>();
        let (fi, fa) = products(NumberFormat::Fp32, &gamma, a, b);
        let exact = a as f64 * b as f64;
        li += log_bias(fi, exact);
        la += log_bias(fa, exact);
        vi += (fi as f64).log2() - exact.log2();
        va += (fa as f64).log2() - exact.log2();
    }
    let n = samples.max(1) as f64;
    Ok(BiasReport {
        samples,
        int_mul_log_bias: li / n,
        a_mult_log_bias: la / n,
        int_mul_value_bias: vi / n,
        a_mult_value_bias: va / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_summary() {
        let r = analyze_error(16, 1.0, NumberFormat::Fp32).unwrap();
        assert_eq!(r.cells.len(), 256);
        // (1.5, 1.5) is on the 16-grid: 2 against 2.25
        assert!((r.summary.int_mul_max_rel_error - 1.0 / 9.0).abs() < 1e-12);
        assert!((r.summary.int_mul_max_rel_error_of_result - 0.125).abs() < 1e-12);
        assert!(r.summary.int_mul_never_overestimates);
        assert!(r.summary.int_mul_exact_iff_zero_mantissa);
        assert!(r.summary.a_mult_mean_log_bias.abs() < r.summary.int_mul_mean_log_bias.abs());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(analyze_error(8, 1.0, NumberFormat::Fp32).is_err());
        assert!(analyze_error(256, 1.0, NumberFormat::Bf16).is_err());
        assert!(analyze_error(16, 40.0, NumberFormat::Fp32).is_err());
        assert!(monte_carlo_bias(10, 0, f64::NAN).is_err());
    }

    #[test]
    fn bf16_grid() {
        let r = analyze_error(128, 1.0, NumberFormat::Bf16).unwrap();
        assert!((r.summary.int_mul_max_rel_error - 1.0 / 9.0).abs() < 1e-12);
        assert!(r.summary.int_mul_never_overestimates);
    }

    #[test]
    fn csv_has_row_per_cell() {
        let r = analyze_error(16, 1.0, NumberFormat::Fp32).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 257);
        assert!(text.lines().nth(1).unwrap().starts_with("1,1,1,1,"));
    }
}
