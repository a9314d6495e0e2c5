use serde::{Deserialize, Serialize};

use super::RoundingMode;

/// Storage format of multiply operands and results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberFormat {
    #[default]
    Fp32,
    Bf16,
}

/// What happens to parameter gradients before the optimizer sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradRounding {
    #[default]
    None,
    /// Round each fully accumulated gradient tensor to bfloat16.
    AfterAccumulation,
}

/// Mixed-precision training policy.
///
/// Multiplies run in `multiply_format`; sums, master weights and the optimizer
/// always stay in binary32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedPrecisionPolicy {
    pub multiply_format: NumberFormat,
    pub grad_rounding: GradRounding,
    pub rounding: RoundingMode,
}

impl MixedPrecisionPolicy {
    /// Plain binary32 training.
    pub const FP32: Self = Self {
        multiply_format: NumberFormat::Fp32,
        grad_rounding: GradRounding::None,
        rounding: RoundingMode::NearestEven,
    };

    /// BF16 multiplies, FP32 accumulation, weight gradients rounded after
    /// accumulation.
    pub const BF16: Self = Self {
        multiply_format: NumberFormat::Bf16,
        grad_rounding: GradRounding::AfterAccumulation,
        rounding: RoundingMode::NearestEven,
    };

    pub fn accumulate_format(&self) -> NumberFormat {
        NumberFormat::Fp32
    }

    pub fn master_weight_format(&self) -> NumberFormat {
        NumberFormat::Fp32
    }

    pub fn is_plain_fp32(&self) -> bool {
        self.multiply_format == NumberFormat::Fp32 && self.grad_rounding == GradRounding::None
    }
}
