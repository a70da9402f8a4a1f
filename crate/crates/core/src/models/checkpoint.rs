use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::autodiff::Tensor;
use crate::nn::BatchNormState;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Enough to rebuild a `ChaCha8Rng` at the exact stream position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        NamedTensor { name: name.to_string(), shape: t.shape().to_vec(), data: t.to_vec() }
    }

    pub fn to_param(&self) -> Tensor {
        Tensor::param(self.shape.clone(), self.data.clone())
    }
}

/// Serialized model: config, named tensors, BN statistics and RNG state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedTensor>,
    pub bn_states: Vec<BatchNormState>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, rng: Option<&ChaCha8Rng>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            params: model.named_params().map(|(n, t)| NamedTensor::from_tensor(n, t)).collect(),
            bn_states: model.bn_states.clone(),
            rng: rng.map(RngState::capture),
        }
    }

    pub fn into_model(self) -> Result<Model, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let reference = super::build_model(&self.config, 0)?;
        if reference.names().len() != self.params.len() {
            return Err(ModelError::Checkpoint("parameter list does not match the architecture".into()));
        }
        for (nt, (name, t)) in self.params.iter().zip(reference.named_params()) {
            if nt.name != name || nt.shape != t.shape() || nt.data.len() != t.numel() {
                return Err(ModelError::Checkpoint(format!("tensor {} does not match {name} {:?}", nt.name, t.shape())));
            }
        }
        if self.bn_states.len() != reference.bn_states.len() {
            return Err(ModelError::Checkpoint("batch-norm layer count mismatch".into()));
        }
        let named = self.params.iter().map(|nt| (nt.name.clone(), nt.to_param())).collect();
        Model::from_parts(self.config, named, self.bn_states)
    }
}

pub fn save_model(model: &Model, rng: Option<&ChaCha8Rng>, path: &Path) -> Result<(), ModelError> {
    let text = serde_json::to_string(&Checkpoint::from_model(model, rng))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Model, Option<ChaCha8Rng>), ModelError> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let rng = ck.rng.map(|r| r.restore());
    Ok((ck.into_model()?, rng))
}
