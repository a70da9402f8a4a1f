use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InstanceWeightNet, LayerLearningRates, MetaConfig, MetaError, MetaLearner, IW_PARAM_NAMES};
use crate::models::{Checkpoint, Model, ModelError, NamedTensor, RngState};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightNetState {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub proj: usize,
    /// Regenerates the fixed projection as well as identifying the init.
    pub seed: u64,
    pub params: Vec<NamedTensor>,
}

/// A model checkpoint plus everything the outer loop needs to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaCheckpoint {
    pub model: Checkpoint,
    pub meta: MetaConfig,
    pub raw_rates: Option<Vec<f64>>,
    pub weight_net: Option<WeightNetState>,
    pub optimizer: Adam,
    pub steps_taken: u64,
    pub steps_skipped: u64,
    pub sampler_rng: Option<RngState>,
}

impl MetaCheckpoint {
    pub fn capture(model: &Model, learner: &MetaLearner, sampler_rng: Option<&ChaCha8Rng>) -> Self {
        MetaCheckpoint {
            model: Checkpoint::from_model(model, None),
            meta: learner.config.clone(),
            raw_rates: learner.rates.as_ref().map(LayerLearningRates::raw_values),
            weight_net: learner.weights.as_ref().map(|w| WeightNetState {
                vocab_size: w.vocab_size,
                feature_dim: w.feature_dim,
                hidden: w.hidden,
                proj: w.proj,
                seed: w.seed,
                params: IW_PARAM_NAMES.iter().zip(&w.params).map(|(n, t)| NamedTensor::from_tensor(n, t)).collect(),
            }),
            optimizer: learner.optimizer.clone(),
            steps_taken: learner.steps_taken,
            steps_skipped: learner.steps_skipped,
            sampler_rng: sampler_rng.map(RngState::capture),
        }
    }

    pub fn restore(self) -> Result<(Model, MetaLearner, Option<ChaCha8Rng>), MetaError> {
        let model = self.model.into_model()?;
        let rates = self.raw_rates.as_deref().map(LayerLearningRates::from_raw);
        let weights = match self.weight_net {
            Some(s) => {
                let names: Vec<&str> = s.params.iter().map(|p| p.name.as_str()).collect();
                if names != IW_PARAM_NAMES {
                    return Err(ModelError::Checkpoint(format!("unexpected weight-net tensors {names:?}")).into());
                }
                let params = s.params.iter().map(NamedTensor::to_param).collect();
                Some(InstanceWeightNet::from_params(s.vocab_size, s.feature_dim, s.hidden, s.proj, s.seed, params))
            }
            None => None,
        };
        let mut learner = MetaLearner::from_parts(&model, self.meta, rates, weights, Some(self.optimizer))?;
        learner.steps_taken = self.steps_taken;
        learner.steps_skipped = self.steps_skipped;
        Ok((model, learner, self.sampler_rng.map(|r| r.restore())))
    }
}

pub fn save_meta(path: &Path, model: &Model, learner: &MetaLearner, sampler_rng: Option<&ChaCha8Rng>) -> Result<(), MetaError> {
    let text = serde_json::to_string(&MetaCheckpoint::capture(model, learner, sampler_rng))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<(Model, MetaLearner, Option<ChaCha8Rng>), MetaError> {
    let text = std::fs::read_to_string(path)?;
    let ck: MetaCheckpoint = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    ck.restore()
}
