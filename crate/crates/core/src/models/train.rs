//! Plain supervised training of the base recognizer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, ForwardCtx, Model, ModelError};
use crate::autodiff::gradients;
use crate::optim::{clip_grad_norm, Adam};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 300, batch_size: 16, lr: 1e-3, max_grad_norm: 5.0 }
    }
}

/// One Adam step on the batch loss with batch statistics and dropout; the
/// running statistics are updated afterwards. Returns the pre-step loss.
pub fn train_step(
    model: &mut Model,
    batch: &Batch,
    optimizer: &mut Adam,
    max_grad_norm: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    let mut ctx = ForwardCtx::train(rng);
    let loss = model.loss(&model.params, batch, &mut ctx, None)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(ModelError::NonFiniteLoss(value));
    }
    let mut grads = gradients(&loss, &model.params, false)?.into_vec().iter().map(|g| g.to_vec()).collect::<Vec<_>>();
    clip_grad_norm(&mut grads, max_grad_norm);
    let updates = std::mem::take(&mut ctx.updates);
    drop(ctx);
    optimizer.step_tensors(&mut model.params, &grads);
    model.apply_bn_updates(&updates);
    Ok(value)
}
