use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Conv2dGeometry, MulMode, Tape, Tensor, Var};
use crate::precision::MixedPrecisionPolicy;

use super::layers::{self, BatchStats, RunningStats};
use super::NnError;

fn default_stride() -> usize {
    1
}
fn default_bn_eps() -> f32 {
    1e-5
}
fn default_bn_momentum() -> f32 {
    0.1
}

/// Layer type and its shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    BatchNorm {
        channels: usize,
        #[serde(default = "default_bn_eps")]
        eps: f32,
        #[serde(default = "default_bn_momentum")]
        momentum: f32,
    },
    Relu,
    SoftmaxCrossEntropy,
}

/// One layer of a sequential model: its kind and the arithmetic mode used by
/// every multiply, divide, root, exp and log inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub mode: MulMode,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, mode: MulMode) -> Self {
        Self { kind, mode }
    }

    pub fn linear(in_features: usize, out_features: usize, mode: MulMode) -> Self {
        Self::new(LayerKind::Linear { in_features, out_features }, mode)
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, mode: MulMode) -> Self {
        Self::new(LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding }, mode)
    }

    pub fn batchnorm(channels: usize, mode: MulMode) -> Self {
        Self::new(LayerKind::BatchNorm { channels, eps: default_bn_eps(), momentum: default_bn_momentum() }, mode)
    }

    pub fn relu() -> Self {
        Self::new(LayerKind::Relu, MulMode::Standard)
    }

    pub fn softmax_xent(mode: MulMode) -> Self {
        Self::new(LayerKind::SoftmaxCrossEntropy, mode)
    }

    /// Letter naming this layer's group in a configuration label.
    fn group(&self) -> Option<char> {
        match self.kind {
            LayerKind::Conv2d { .. } => Some('c'),
            LayerKind::Linear { .. } => Some('f'),
            LayerKind::BatchNorm { .. } => Some('b'),
            LayerKind::SoftmaxCrossEntropy => Some('e'),
            LayerKind::Relu => None,
        }
    }
}

/// Configuration label such as `cE.fE.bE.eE`: one entry per layer group
/// (convolution, fully connected, batch norm, softmax cross-entropy) whose
/// layers are not all standard, or `baseline(FP32)` when none are.
pub fn mode_label(specs: &[LayerSpec]) -> String {
    let mut parts = Vec::new();
    for group in ['c', 'f', 'b', 'e'] {
        let suffix = specs
            .iter()
            .filter(|s| s.group() == Some(group))
            .find_map(|s| s.mode.label_suffix());
        if let Some(suffix) = suffix {
            parts.push(format!("{group}{suffix}"));
        }
    }
    if parts.is_empty() {
        "baseline(FP32)".to_string()
    } else {
        parts.join(".")
    }
}

#[derive(Debug, Clone)]
enum LayerState {
    Linear { w: Tensor, b: Tensor },
    Conv2d { w: Tensor, geometry: Conv2dGeometry },
    BatchNorm { scale: Tensor, shift: Tensor, eps: f32, stats: RunningStats },
    Relu,
    SoftmaxXent,
}

/// Values recorded by one forward pass.
#[derive(Debug)]
pub struct Forward {
    pub logits: Var,
    /// Present when labels were supplied.
    pub loss: Option<Var>,
    /// Parameter leaves, in [`Model::parameters`] order.
    pub params: Vec<Var>,
    /// Batch statistics per batch-norm layer index (training only).
    pub batch_stats: Vec<(usize, BatchStats)>,
}

/// A sequential network ending in softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct Model {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    layers: Vec<LayerState>,
    gamma_multiplier: f64,
}

#[derive(Serialize, Deserialize)]
struct SavedHeader {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    gamma_multiplier: f64,
}

const MAGIC: &[u8; 8] = b"ADDINTM1";

fn he_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

impl Model {
    /// Builds and initializes a model for inputs of per-sample shape
    /// `input_shape` (e.g. `[784]`, or `[1, 28, 28]` ahead of a convolution).
    /// Weights are He-uniform from a generator seeded with `seed`; biases and
    /// shifts start at zero and batch-norm scales at one.
    pub fn new(specs: Vec<LayerSpec>, input_shape: Vec<usize>, seed: u64) -> Result<Self, NnError> {
        let arch = |msg: String| NnError::Architecture(msg);
        if !matches!(specs.last().map(|s| s.kind), Some(LayerKind::SoftmaxCrossEntropy)) {
            return Err(arch("the last layer must be softmax_cross_entropy".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let state = match spec.kind {
                LayerKind::Linear { in_features, out_features } => {
                    let features: usize = shape.iter().product();
                    if features != in_features {
                        return Err(arch(format!("layer {i}: linear expects {in_features} inputs, gets {shape:?}")));
                    }
                    shape = vec![out_features];
                    LayerState::Linear {
                        w: he_uniform(&mut rng, vec![in_features, out_features], in_features),
                        b: Tensor::zeros([out_features]),
                    }
                }
                LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(arch(format!("layer {i}: conv2d expects [{in_channels}, H, W], gets {shape:?}")));
                    }
                    let geometry = Conv2dGeometry::square(kernel, stride, padding);
                    let (oh, ow) = geometry.output_hw(shape[1], shape[2])?;
                    shape = vec![out_channels, oh, ow];
                    let fan_in = in_channels * kernel * kernel;
                    LayerState::Conv2d {
                        w: he_uniform(&mut rng, vec![out_channels, in_channels, kernel, kernel], fan_in),
                        geometry,
                    }
                }
                LayerKind::BatchNorm { channels, eps, momentum } => {
                    if shape.first() != Some(&channels) {
                        return Err(arch(format!("layer {i}: batch_norm over {channels} channels, gets {shape:?}")));
                    }
                    LayerState::BatchNorm {
                        scale: Tensor::full([channels], 1.0),
                        shift: Tensor::zeros([channels]),
                        eps,
                        stats: RunningStats::new(channels, momentum),
                    }
                }
                LayerKind::Relu => LayerState::Relu,
                LayerKind::SoftmaxCrossEntropy => {
                    if i + 1 != specs.len() {
                        return Err(arch(format!("layer {i}: softmax_cross_entropy must be last")));
                    }
                    if shape.len() != 1 {
                        return Err(arch(format!("layer {i}: softmax_cross_entropy needs flat logits, gets {shape:?}")));
                    }
                    LayerState::SoftmaxXent
                }
            };
            layers.push(state);
        }
        Ok(Self { specs, input_shape, layers, gamma_multiplier: 1.0 })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn label(&self) -> String {
        mode_label(&self.specs)
    }

    /// Scales γ in every a-operation of this model.
    pub fn set_gamma_multiplier(&mut self, multiplier: f64) {
        self.gamma_multiplier = multiplier;
    }

    pub fn gamma_multiplier(&self) -> f64 {
        self.gamma_multiplier
    }

    /// An empty tape configured for this model under `policy`.
    pub fn tape(&self, policy: &MixedPrecisionPolicy) -> Tape {
        let mut tape = Tape::with_format(policy.multiply_format, policy.rounding);
        if self.gamma_multiplier != 1.0 {
            tape.set_gamma_multiplier(self.gamma_multiplier);
        }
        tape
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerState::Linear { w, b } => out.extend([w, b]),
                LayerState::Conv2d { w, .. } => out.push(w),
                LayerState::BatchNorm { scale, shift, .. } => out.extend([scale, shift]),
                LayerState::Relu | LayerState::SoftmaxXent => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerState::Linear { w, b } => out.extend([w, b]),
                LayerState::Conv2d { w, .. } => out.push(w),
                LayerState::BatchNorm { scale, shift, .. } => out.extend([scale, shift]),
                LayerState::Relu | LayerState::SoftmaxXent => {}
            }
        }
        out
    }

    /// Running statistics of the batch-norm layer at `layer`, if it is one.
    pub fn running_stats(&self, layer: usize) -> Option<&RunningStats> {
        match self.layers.get(layer)? {
            LayerState::BatchNorm { stats, .. } => Some(stats),
            _ => None,
        }
    }

    /// Records the network on `tape` for a batch `x: [B, input_shape...]`
    /// (rank-2 `[B, features]` inputs are reshaped as needed). The loss is
    /// recorded when `labels` is given. Batch norm uses batch statistics when
    /// `training`, running statistics otherwise.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, labels: Option<&[usize]>, training: bool) -> Result<Forward, NnError> {
        let batch = x.shape().first().copied().unwrap_or(0);
        let mut full_shape = vec![batch];
        full_shape.extend(&self.input_shape);
        let per_sample: usize = self.input_shape.iter().product();
        if x.numel() != batch * per_sample {
            return Err(NnError::Shape { what: "model input", expected: full_shape, got: x.shape().to_vec() });
        }
        let mut h = tape.constant(x.clone().reshape(full_shape)?);
        let mut params = Vec::new();
        let mut batch_stats = Vec::new();
        let mut loss = None;
        for (i, (spec, layer)) in self.specs.iter().zip(&self.layers).enumerate() {
            let mode = spec.mode;
            h = match layer {
                LayerState::Linear { w, b } => {
                    let (w, b) = (tape.param(w.clone()), tape.param(b.clone()));
                    params.extend([w, b]);
                    layers::linear_forward(tape, h, w, b, mode)?
                }
                LayerState::Conv2d { w, geometry } => {
                    let w = tape.param(w.clone());
                    params.push(w);
                    layers::conv2d_forward(tape, h, w, *geometry, mode)?
                }
                LayerState::BatchNorm { scale, shift, eps, stats } => {
                    let (s, t) = (tape.param(scale.clone()), tape.param(shift.clone()));
                    params.extend([s, t]);
                    let (y, batch) = layers::batchnorm_forward(tape, h, s, t, *eps, mode, stats, training)?;
                    if let Some(b) = batch {
                        batch_stats.push((i, b));
                    }
                    y
                }
                LayerState::Relu => tape.relu(h),
                LayerState::SoftmaxXent => {
                    if let Some(labels) = labels {
                        loss = Some(layers::softmax_xent_forward(tape, h, labels, mode)?);
                    }
                    h
                }
            };
        }
        Ok(Forward { logits: h, loss, params, batch_stats })
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_batch_stats(&mut self, batch_stats: &[(usize, BatchStats)]) {
        for (i, b) in batch_stats {
            if let Some(LayerState::BatchNorm { stats, .. }) = self.layers.get_mut(*i) {
                stats.update(&b.mean, &b.var, b.count);
            }
        }
    }

    /// Predicted classes for `x` in evaluation mode, in batches of `batch_size`.
    pub fn predict(&self, x: &Tensor, batch_size: usize, policy: &MixedPrecisionPolicy) -> Result<Vec<usize>, NnError> {
        let n = x.shape().first().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + batch_size.max(1)).min(n);
            let mut tape = self.tape(policy);
            let fwd = self.forward(&mut tape, &x.slice_rows(start, end), None, false)?;
            let logits = tape.value(fwd.logits);
            let classes = logits.shape()[1];
            out.extend(logits.data().chunks(classes).map(|row| {
                // first maximum wins ties
                row.iter().enumerate().fold(0, |best, (k, &v)| if v > row[best] { k } else { best })
            }));
            start = end;
        }
        Ok(out)
    }

    /// Fraction of `labels` predicted correctly.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize], batch_size: usize, policy: &MixedPrecisionPolicy) -> Result<f64, NnError> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let predicted = self.predict(x, batch_size, policy)?;
        let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Writes the architecture, parameters and running statistics.
    pub fn save(&self, mut w: impl Write) -> Result<(), NnError> {
        let header = SavedHeader {
            specs: self.specs.clone(),
            input_shape: self.input_shape.clone(),
            gamma_multiplier: self.gamma_multiplier,
        };
        let header = serde_json::to_vec(&header).map_err(|e| NnError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for values in self.state_slices() {
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a model written by [`save`](Self::save).
    pub fn load(mut r: impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("not a saved model".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: SavedHeader = serde_json::from_slice(&header).map_err(|e| NnError::Format(e.to_string()))?;
        let mut model = Model::new(header.specs, header.input_shape, 0)?;
        model.gamma_multiplier = header.gamma_multiplier;
        for values in model.state_slices_mut() {
            for v in values.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b);
            }
        }
        Ok(model)
    }

    /// Every stored value, layer by layer; batch-norm running statistics
    /// follow that layer's parameters.
    fn state_slices(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerState::Linear { w, b } => out.extend([w.data(), b.data()]),
                LayerState::Conv2d { w, .. } => out.push(w.data()),
                LayerState::BatchNorm { scale, shift, stats, .. } => {
                    out.extend([scale.data(), shift.data(), &stats.mean[..], &stats.var[..]])
                }
                LayerState::Relu | LayerState::SoftmaxXent => {}
            }
        }
        out
    }

    fn state_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerState::Linear { w, b } => out.extend([w.data_mut(), b.data_mut()]),
                LayerState::Conv2d { w, .. } => out.push(w.data_mut()),
                LayerState::BatchNorm { scale, shift, stats, .. } => {
                    out.extend([scale.data_mut(), shift.data_mut(), &mut stats.mean[..], &mut stats.var[..]])
                }
                LayerState::Relu | LayerState::SoftmaxXent => {}
            }
        }
        out
    }
}
