use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::NnError;

fn default_momentum() -> f32 {
    0.9
}
fn default_beta1() -> f32 {
    0.9
}
fn default_beta2() -> f32 {
    0.999
}
fn default_adam_eps() -> f32 {
    1e-8
}

/// Update rule and hyperparameters. Optimizer arithmetic is ordinary binary32
/// in every mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// Heavy-ball SGD: `v = μv + g + λp`, `p -= lr·v`.
    MomentumSgd {
        lr: f32,
        #[serde(default = "default_momentum")]
        momentum: f32,
        #[serde(default)]
        weight_decay: f32,
    },
    /// Adam with bias-corrected moments.
    Adam {
        lr: f32,
        #[serde(default = "default_beta1")]
        beta1: f32,
        #[serde(default = "default_beta2")]
        beta2: f32,
        #[serde(default = "default_adam_eps")]
        eps: f32,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f32) -> Self {
        OptimizerKind::Adam { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_adam_eps() }
    }

    pub fn sgd(lr: f32, momentum: f32) -> Self {
        OptimizerKind::MomentumSgd { lr, momentum, weight_decay: 0.0 }
    }
}

/// Optimizer kind plus per-parameter moment buffers, created on the first
/// step and shape-checked on every later one.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    step: u32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    fn ensure_buffers(&mut self, params: &[&mut Tensor]) -> Result<(), NnError> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
            return Ok(());
        }
        if self.first.len() != params.len() {
            return Err(NnError::ParamCount { expected: self.first.len(), got: params.len() });
        }
        for (buf, p) in self.first.iter().zip(params) {
            if buf.len() != p.numel() {
                return Err(NnError::Shape { what: "optimizer buffer", expected: vec![buf.len()], got: p.shape().to_vec() });
            }
        }
        Ok(())
    }
}

/// Applies one update to `params` in place.
pub fn optimizer_step(params: &mut [&mut Tensor], grads: &[Vec<f32>], state: &mut OptimizerState) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return Err(NnError::ParamCount { expected: params.len(), got: grads.len() });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(NnError::Shape { what: "gradient", expected: p.shape().to_vec(), got: vec![g.len()] });
        }
    }
    state.ensure_buffers(params)?;
    state.step += 1;
    match state.kind {
        OptimizerKind::MomentumSgd { lr, momentum, weight_decay } => {
            for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.first) {
                for ((w, &g), v) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                    *v = momentum * *v + (g + weight_decay * *w);
                    *w -= lr * *v;
                }
            }
        }
        OptimizerKind::Adam { lr, beta1, beta2, eps } => {
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let moments = state.first.iter_mut().zip(&mut state.second);
            for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(moments) {
                for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
