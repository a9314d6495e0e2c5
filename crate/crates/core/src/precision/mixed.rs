use crate::autodiff::Tensor;
use crate::nn::{optimizer_step, BatchStats, Model, NnError, OptimizerState};

use super::{quantize, GradRounding, MixedPrecisionPolicy};

/// Rounds fully accumulated gradient tensors as the policy requires.
pub fn round_grads(grads: &mut [Vec<f32>], policy: &MixedPrecisionPolicy) {
    if policy.grad_rounding == GradRounding::AfterAccumulation {
        for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *g = quantize(*g, policy.rounding);
        }
    }
}

/// Loss and parameter gradients of one training batch.
#[derive(Debug)]
pub struct StepGradients {
    pub loss: f32,
    /// In [`Model::parameters`] order, already rounded per the policy.
    pub grads: Vec<Vec<f32>>,
    pub batch_stats: Vec<(usize, BatchStats)>,
}

/// Forward and backward pass under `policy` without touching the model.
///
/// Multiplies run on a tape in the policy's multiply format; every sum is
/// binary32, and each parameter gradient is rounded (if at all) only once it
/// is fully accumulated over the batch.
pub fn mixed_gradients(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    policy: &MixedPrecisionPolicy,
) -> Result<StepGradients, NnError> {
    let mut tape = model.tape(policy);
    let fwd = model.forward(&mut tape, inputs, Some(labels), true)?;
    let loss_var = fwd.loss.expect("labels were supplied");
    let loss = tape.value(loss_var).data()[0];
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss(loss));
    }
    tape.backward(loss_var)?;
    let mut grads: Vec<Vec<f32>> = fwd
        .params
        .iter()
        .map(|&v| tape.take_grad(v).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
        .collect();
    round_grads(&mut grads, policy);
    Ok(StepGradients { loss, grads, batch_stats: fwd.batch_stats })
}

/// One optimizer step on `model`'s binary32 master weights under `policy`.
/// Returns the batch loss from before the update.
///
/// With [`MixedPrecisionPolicy::FP32`] this is exactly the plain training
/// step.
pub fn mixed_step(
    model: &mut Model,
    inputs: &Tensor,
    labels: &[usize],
    optimizer: &mut OptimizerState,
    policy: &MixedPrecisionPolicy,
) -> Result<f32, NnError> {
    let step = mixed_gradients(model, inputs, labels, policy)?;
    model.apply_batch_stats(&step.batch_stats);
    optimizer_step(&mut model.parameters_mut(), &step.grads, optimizer)?;
    Ok(step.loss)
}
