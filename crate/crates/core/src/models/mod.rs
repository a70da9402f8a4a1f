//! Two small recognizers: SAR-lite (conv encoder, LSTM encoder/decoder with
//! 2-D attention) and FPHTR-lite (conv encoder, transformer decoder).

mod batch;
mod checkpoint;
mod forward;
mod init;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use batch::{make_batch, stack_images, Batch};
pub use checkpoint::{load_model, save_model, Checkpoint, NamedTensor, RngState, CHECKPOINT_VERSION};
pub use train::{train_step, TrainConfig};
pub use forward::{decode_greedy, decode_greedy_batch, forward_teacher_forcing, ForwardCtx, ForwardOut};

use crate::autodiff::Tensor;
use crate::nn::{BatchNormState, LossSpec, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    SARLite,
    FPHTRLite,
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sar" | "sarlite" | "sar-lite" => Ok(Arch::SARLite),
            "fphtr" | "fphtrlite" | "fphtr-lite" => Ok(Arch::FPHTRLite),
            _ => Err(format!("unknown architecture {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub conv_channels: Vec<usize>,
    /// Transformer width (FPHTR) or LSTM hidden size (SAR).
    pub d_model: usize,
    /// Attention width of the 2-D attention (SAR only).
    pub attn_dim: usize,
    pub ff_dim: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub loss: LossSpec,
}

impl ModelConfig {
    pub fn fphtr() -> Self {
        ModelConfig {
            arch: Arch::FPHTRLite,
            conv_channels: vec![8, 16, 32],
            d_model: 32,
            attn_dim: 32,
            ff_dim: 64,
            decoder_layers: 1,
            heads: 4,
            dropout: 0.1,
            max_seq_len: 55,
            loss: LossSpec::default(),
        }
    }

    pub fn sar() -> Self {
        ModelConfig { arch: Arch::SARLite, decoder_layers: 1, heads: 1, ..Self::fphtr() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(3..=4).contains(&self.conv_channels.len()) || self.conv_channels.contains(&0) {
            return bad(format!("conv_channels must list 3 or 4 positive widths, got {:?}", self.conv_channels));
        }
        if self.d_model == 0 || self.max_seq_len == 0 || self.decoder_layers == 0 {
            return bad("d_model, max_seq_len and decoder_layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.loss.label_smoothing < 0.0 || self.loss.label_smoothing >= 1.0 {
            return bad(format!("label_smoothing must lie in [0, 1), got {}", self.loss.label_smoothing));
        }
        match self.arch {
            Arch::FPHTRLite => {
                if self.heads == 0 || self.d_model % self.heads != 0 {
                    return bad(format!("{} heads do not divide d_model {}", self.heads, self.d_model));
                }
                if self.d_model % 4 != 0 {
                    return bad(format!("d_model {} must be a multiple of 4 for 2-D positions", self.d_model));
                }
                if self.ff_dim == 0 {
                    return bad("ff_dim must be positive".into());
                }
            }
            Arch::SARLite => {
                if self.attn_dim == 0 {
                    return bad("attn_dim must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.loss.vocab.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("character {0:?} is not in the vocabulary")]
    UnknownCharacter(char),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("non-finite training loss {0}")]
    NonFiniteLoss(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A recognizer: configuration, named trainable tensors and the running
/// statistics of its batch-norm layers.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    names: Vec<String>,
    index: HashMap<String, usize>,
    pub params: Vec<Tensor>,
    pub bn_states: Vec<BatchNormState>,
}

pub const HEAD_WEIGHT: &str = "head.weight";

impl Model {
    pub(crate) fn from_parts(
        config: ModelConfig,
        named: Vec<(String, Tensor)>,
        bn_states: Vec<BatchNormState>,
    ) -> Result<Self, ModelError> {
        let mut index = HashMap::new();
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for (i, (n, t)) in named.into_iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(ModelError::InvalidConfig(format!("duplicate parameter name {n}")));
            }
            names.push(n);
            params.push(t);
        }
        Ok(Model { config, names, index, params, bn_states })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[self.index[name]]
    }

    /// Position of the final classifier weight.
    pub fn head_index(&self) -> usize {
        self.index[HEAD_WEIGHT]
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    /// Replaces all parameters with fresh leaves holding the given values.
    pub fn set_values(&mut self, values: &[Vec<f64>]) {
        assert_eq!(values.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(values) {
            *p = Tensor::param(p.shape().to_vec(), v.clone());
        }
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(Tensor::to_vec).collect()
    }

    /// FNV-1a over parameter bits, for freezing checks and reproducibility.
    pub fn checksum(&self) -> u64 {
        checksum_tensors(&self.params)
    }
}

pub fn checksum_tensors(ts: &[Tensor]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for t in ts {
        for v in t.data() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

/// Deterministically initialized model.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
    config.validate()?;
    init::build(config, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCount {
    /// Per tensor, in model order.
    pub tensors: Vec<(String, usize)>,
    /// Per top-level submodule (`backbone`, `encoder`, `decoder`, ...).
    pub modules: Vec<(String, usize)>,
    pub total: usize,
}

pub fn count_parameters(model: &Model) -> ParamCount {
    let tensors: Vec<(String, usize)> = model.named_params().map(|(n, t)| (n.to_string(), t.numel())).collect();
    let mut modules: Vec<(String, usize)> = Vec::new();
    for (name, n) in &tensors {
        let top = name.split('.').next().unwrap_or(name).to_string();
        match modules.iter_mut().find(|(m, _)| *m == top) {
            Some((_, c)) => *c += n,
            None => modules.push((top, *n)),
        }
    }
    let total = tensors.iter().map(|(_, n)| n).sum();
    ParamCount { tensors, modules, total }
}
