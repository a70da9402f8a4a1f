use serde::{Deserialize, Serialize};

use super::NnError;
use crate::autodiff::Tensor;

/// Where normalization statistics come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatsMode {
    /// Statistics of the current batch; running values are updated in training.
    BatchStats,
    /// Stored running statistics; nothing is updated.
    RunningStats,
}

/// Running statistics and hyperparameters of one batch-norm layer.
///
/// The affine `gamma`/`beta` tensors are trainable and live with the other
/// model parameters; they are passed to [`batch_norm`] separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub stats_mode: StatsMode,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            stats_mode: StatsMode::BatchStats,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn apply(&mut self, update: &RunningUpdate) {
        self.running_mean.clone_from(&update.mean);
        self.running_var.clone_from(&update.var);
    }
}

/// New running statistics produced by a training-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningUpdate {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization of `[N, C, H, W]` (or `[N, C]`) using the state's own
/// statistics mode.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BatchNormState,
    training: bool,
) -> Result<(Tensor, Option<RunningUpdate>), NnError> {
    batch_norm_with_mode(x, gamma, beta, state, state.stats_mode, training)
}

pub fn batch_norm_with_mode(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BatchNormState,
    mode: StatsMode,
    training: bool,
) -> Result<(Tensor, Option<RunningUpdate>), NnError> {
    let s = x.shape();
    let c = state.channels();
    if !(s.len() == 4 || s.len() == 2) || s[1] != c || gamma.shape() != [c] || beta.shape() != [c] {
        return Err(NnError::ShapeMismatch(format!(
            "batch_norm: input {s:?}, gamma {:?}, beta {:?}, {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let bshape: Vec<usize> = if s.len() == 4 { vec![1, c, 1, 1] } else { vec![1, c] };
    let count = x.numel() / c;
    let reduce = |t: &Tensor| {
        let mut r = t.sum_axis(0, true);
        if s.len() == 4 {
            r = r.sum_axis(3, true).sum_axis(2, true);
        }
        r
    };
    let g = gamma.reshape(bshape.clone());
    let b = beta.reshape(bshape.clone());
    match mode {
        StatsMode::BatchStats => {
            if count < 2 {
                return Err(NnError::BatchTooSmall(count));
            }
            let mean = reduce(x).scale(1.0 / count as f64);
            let centered = x.sub(&mean);
            let var = reduce(&centered.square()).scale(1.0 / count as f64);
            let y = centered.mul(&var.add_scalar(state.eps).powf(-0.5)).mul(&g).add(&b);
            let update = training.then(|| {
                let m = state.momentum;
                let unbias = count as f64 / (count as f64 - 1.0);
                RunningUpdate {
                    mean: state.running_mean.iter().zip(mean.data()).map(|(r, v)| (1.0 - m) * r + m * v).collect(),
                    var: state.running_var.iter().zip(var.data()).map(|(r, v)| (1.0 - m) * r + m * v * unbias).collect(),
                }
            });
            Ok((y, update))
        }
        StatsMode::RunningStats => {
            let mean = Tensor::new(bshape.clone(), state.running_mean.clone());
            let inv_std: Vec<f64> = state.running_var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
            let inv_std = Tensor::new(bshape, inv_std);
            Ok((x.sub(&mean).mul(&inv_std).mul(&g).add(&b), None))
        }
    }
}
