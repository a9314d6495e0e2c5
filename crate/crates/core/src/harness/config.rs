use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::{LayerKind, LayerSpec, OptimizerKind};
use crate::precision::MixedPrecisionPolicy;

use super::mnist;
use super::HarnessError;

/// Hidden width used by [`TrainConfig::fast`].
pub const FAST_HIDDEN: usize = 256;
/// Epoch cap used by [`TrainConfig::fast`].
pub const FAST_EPOCHS: usize = 5;

fn default_input_shape() -> Vec<usize> {
    vec![784]
}
fn default_gamma_multiplier() -> f64 {
    1.0
}
fn default_eval_batch() -> usize {
    1000
}

/// Where the MNIST files live and how much of each split to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

/// One training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Per-sample input shape the flat images are viewed as.
    #[serde(default = "default_input_shape")]
    pub input_shape: Vec<usize>,
    #[serde(default = "default_gamma_multiplier")]
    pub gamma_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_out: Option<PathBuf>,
    pub data: DataConfig,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub precision: MixedPrecisionPolicy,
    pub layers: Vec<LayerSpec>,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads and validates a config; a relative data directory is resolved
    /// against the current directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that does not touch the filesystem.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_batch_size == 0 {
            return bad("eval_batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.layers.is_empty() {
            return bad("no layers");
        }
        if self.gamma_multiplier.is_nan() || (self.gamma_multiplier * crate::pseudo_arith::gamma()).abs() >= 1.0 {
            return bad("gamma_multiplier out of range");
        }
        Ok(())
    }

    /// Errors unless all four MNIST files are present.
    pub fn check_data(&self) -> Result<(), HarnessError> {
        for name in [mnist::TRAIN_IMAGES, mnist::TRAIN_LABELS, mnist::TEST_IMAGES, mnist::TEST_LABELS] {
            let path = self.data.dir.join(name);
            if !path.is_file() {
                return Err(HarnessError::Config(format!("missing data file {}", path.display())));
            }
        }
        Ok(())
    }

    /// The CI-sized variant: every hidden linear layer narrowed to at most
    /// [`FAST_HIDDEN`] units and at most [`FAST_EPOCHS`] epochs.
    pub fn fast(&self) -> Self {
        let mut out = self.clone();
        out.epochs = out.epochs.min(FAST_EPOCHS);
        let last_linear = out.layers.iter().rposition(|l| matches!(l.kind, LayerKind::Linear { .. }));
        let mut width: Option<usize> = None;
        for (i, layer) in out.layers.iter_mut().enumerate() {
            match &mut layer.kind {
                LayerKind::Linear { in_features, out_features } => {
                    if let Some(w) = width.take() {
                        *in_features = w;
                    }
                    if Some(i) != last_linear && *out_features > FAST_HIDDEN {
                        *out_features = FAST_HIDDEN;
                        width = Some(FAST_HIDDEN);
                    }
                }
                LayerKind::BatchNorm { channels, .. } => {
                    if let Some(w) = width {
                        *channels = w;
                    }
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::MulMode;

    const MLP: &str = r#"
seed = 1
epochs = 20
batch_size = 100

[data]
dir = "data/mnist"

[optimizer]
kind = "adam"
lr = 0.001

[[layers]]
kind = "linear"
in_features = 784
out_features = 1000
mode = "exact"

[[layers]]
kind = "relu"

[[layers]]
kind = "linear"
in_features = 1000
out_features = 1000
mode = "exact"

[[layers]]
kind = "relu"

[[layers]]
kind = "linear"
in_features = 1000
out_features = 10
mode = "exact"

[[layers]]
kind = "softmax_cross_entropy"
"#;

    #[test]
    fn parses_with_defaults() {
        let c = TrainConfig::from_toml(MLP).unwrap();
        assert_eq!(c.layers.len(), 6);
        assert_eq!(c.layers[0], LayerSpec::linear(784, 1000, MulMode::ExactOp));
        assert_eq!(c.layers[5].mode, MulMode::Standard);
        assert_eq!(c.optimizer, OptimizerKind::adam(0.001));
        assert_eq!(c.precision, MixedPrecisionPolicy::FP32);
        assert_eq!(c.input_shape, vec![784]);
        assert_eq!(c.eval_batch_size, 1000);
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = TrainConfig::from_toml(MLP).unwrap();
        c.precision = MixedPrecisionPolicy::BF16;
        c.metrics_out = Some("runs/m.jsonl".into());
        c.data.train_limit = Some(256);
        c.optimizer = OptimizerKind::MomentumSgd { lr: 0.05 * 32.0 / 256.0, momentum: 0.9, weight_decay: 1e-4 };
        c.gamma_multiplier = 0.5;
        let back = TrainConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [("epochs = 20", "epochs = 0"), ("batch_size = 100", "batch_size = 0"), ("seed = 1", "seed = 1\ncolour = 3")] {
            assert!(TrainConfig::from_toml(&MLP.replace(from, to)).is_err(), "{to}");
        }
        assert!(TrainConfig::from_toml(&MLP.replace("\"exact\"", "\"fuzzy\"")).is_err());
    }

    #[test]
    fn fast_narrows_hidden_layers() {
        let c = TrainConfig::from_toml(MLP).unwrap().fast();
        assert_eq!(c.epochs, FAST_EPOCHS);
        let widths: Vec<(usize, usize)> = c
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Linear { in_features, out_features } => Some((in_features, out_features)),
                _ => None,
            })
            .collect();
        assert_eq!(widths, vec![(784, 256), (256, 256), (256, 10)]);
        assert_eq!(c.layers[0].mode, MulMode::ExactOp);
    }
}
