use std::f32::consts::{LN_2, LOG2_E};

use crate::autodiff::{Conv2dGeometry, MulMode, Tape, Tensor, Var};

use super::NnError;

/// Batch-norm statistics kept across steps for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub momentum: f32,
}

impl RunningStats {
    pub fn new(channels: usize, momentum: f32) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels], momentum }
    }

    /// Blends one batch's statistics in; `n` is the number of values each
    /// channel statistic was computed from (the variance is stored unbiased).
    pub fn update(&mut self, batch_mean: &[f32], batch_var: &[f32], n: usize) {
        let m = self.momentum;
        let unbias = if n > 1 { n as f32 / (n - 1) as f32 } else { 1.0 };
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - m) * *r + m * b * unbias;
        }
    }
}

/// `x · w + bias` with `x: [B, I]` (higher ranks are flattened to `[B, I]`),
/// `w: [I, O]`, `bias: [O]`.
pub fn linear_forward(tape: &mut Tape, x: Var, w: Var, bias: Var, mode: MulMode) -> Result<Var, NnError> {
    let shape = tape.value(x).shape().to_vec();
    let x = if shape.len() > 2 {
        let features = shape[1..].iter().product();
        tape.reshape(x, &[shape[0], features])?
    } else {
        x
    };
    let y = tape.matmul(x, w, mode)?;
    let out = tape.value(w).shape()[1];
    if tape.value(bias).shape() != [out] {
        return Err(NnError::Shape { what: "linear bias", expected: vec![out], got: tape.value(bias).shape().to_vec() });
    }
    Ok(tape.add(y, bias)?)
}

/// 2-D convolution of `x: [B, C, H, W]` with `w: [F, C, kh, kw]`, zero padded,
/// without bias. Products are taken under `mode`; each output sums its
/// products in (c, ky, kx) order.
pub fn conv2d_forward(tape: &mut Tape, x: Var, w: Var, geometry: Conv2dGeometry, mode: MulMode) -> Result<Var, NnError> {
    let xs = tape.value(x).shape().to_vec();
    let ws = tape.value(w).shape().to_vec();
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != geometry.kernel_h || ws[3] != geometry.kernel_w {
        return Err(NnError::Shape { what: "conv2d weight", expected: xs, got: ws });
    }
    let (oh, ow) = geometry.output_hw(xs[2], xs[3])?;
    let cols = tape.im2col(x, geometry)?;
    let filters = ws[0];
    let wm = tape.reshape(w, &[filters, ws[1] * ws[2] * ws[3]])?;
    let wt = tape.permute(wm, &[1, 0])?;
    let y = tape.matmul(cols, wt, mode)?;
    let y = tape.reshape(y, &[xs[0], oh, ow, filters])?;
    Ok(tape.permute(y, &[0, 3, 1, 2])?)
}

/// Batch statistics of a batch-norm forward in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    /// Values per channel the statistics were taken over.
    pub count: usize,
}

/// Batch normalization over axis 1 of `x: [B, C, ...]`.
///
/// In training mode the batch mean and (biased) variance are computed on the
/// tape: sums are ordinary additions, squaring uses the mode's multiply and
/// the divisions by the count use the mode's divide. Evaluation mode
/// normalizes with `running` instead. Either way the result is
/// `scale · (x − mean) / sqrt(var + eps) + shift` with the mode's divide,
/// square root and multiply. The returned statistics (training only) are for
/// the caller to fold into its running averages.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    tape: &mut Tape,
    x: Var,
    scale: Var,
    shift: Var,
    eps: f32,
    mode: MulMode,
    running: &RunningStats,
    training: bool,
) -> Result<(Var, Option<BatchStats>), NnError> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() < 2 {
        return Err(NnError::Shape { what: "batch-norm input", expected: vec![0, 0], got: shape });
    }
    let channels = shape[1];
    for (what, v) in [("batch-norm scale", scale), ("batch-norm shift", shift)] {
        if tape.value(v).shape() != [channels] {
            return Err(NnError::Shape { what, expected: vec![channels], got: tape.value(v).shape().to_vec() });
        }
    }
    // [1, C, 1, ...] so per-channel tensors broadcast against x.
    let mut stat_shape = vec![1usize; shape.len()];
    stat_shape[1] = channels;
    let axes: Vec<usize> = (0..shape.len()).filter(|&a| a != 1).collect();
    let count = shape.iter().product::<usize>() / channels;

    let (xc, var, stats) = if training {
        if shape[0] < 2 {
            return Err(NnError::BatchTooSmall(shape[0]));
        }
        let n = tape.constant(Tensor::scalar(count as f32));
        let sum = tape.sum_axes(x, &axes)?;
        let mean = tape.div(sum, n, mode)?;
        let xc = tape.sub(x, mean)?;
        let sq = tape.mul(xc, xc, mode)?;
        let sq_sum = tape.sum_axes(sq, &axes)?;
        let var = tape.div(sq_sum, n, mode)?;
        let stats = BatchStats {
            mean: tape.value(mean).data().to_vec(),
            var: tape.value(var).data().to_vec(),
            count,
        };
        (xc, var, Some(stats))
    } else {
        let mean = tape.constant(Tensor::new(stat_shape.clone(), running.mean.clone())?);
        let var = tape.constant(Tensor::new(stat_shape.clone(), running.var.clone())?);
        (tape.sub(x, mean)?, var, None)
    };
    let shifted = tape.add_scalar(var, eps);
    let std = tape.sqrt(shifted, mode);
    let xhat = tape.div(xc, std, mode)?;
    let scale = tape.reshape(scale, &stat_shape)?;
    let shift = tape.reshape(shift, &stat_shape)?;
    let scaled = tape.mul(xhat, scale, mode)?;
    Ok((tape.add(scaled, shift)?, stats))
}

/// Mean softmax cross-entropy of `logits: [B, K]` against `labels`.
///
/// Each row is shifted by an integer `s` (the ceiling of its maximum; the
/// exact maximum in standard mode) before exponentiating, so every shifted
/// logit is at most zero. Natural exp and log go through the base-2 kernels
/// with `log2(e)` and `ln 2` scaling multiplies, all under `mode`. The loss
/// is computed from the shifted logits alone, which makes it invariant to
/// exact integer shifts of the input in every mode.
pub fn softmax_xent_forward(tape: &mut Tape, logits: Var, labels: &[usize], mode: MulMode) -> Result<Var, NnError> {
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || shape[1] == 0 {
        return Err(NnError::Shape { what: "logits", expected: vec![labels.len(), 0], got: shape });
    }
    let classes = shape[1];
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    let shifts: Vec<f32> = tape
        .value(logits)
        .data()
        .chunks(classes)
        .map(|row| {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if mode == MulMode::Standard {
                max
            } else {
                max.ceil()
            }
        })
        .collect();
    let s = tape.constant(Tensor::new([labels.len(), 1], shifts)?);
    let z = tape.sub(logits, s)?;
    let t = tape.mul_scalar(z, LOG2_E, mode);
    let p = tape.exp2(t, mode);
    let total = tape.sum_axes(p, &[1])?;
    let log_total = tape.log2(total, mode);
    let lse = tape.mul_scalar(log_total, LN_2, mode);
    let picked = tape.pick(z, labels)?;
    let nll = tape.sub(lse, picked)?;
    Ok(tape.mean(nll))
}
