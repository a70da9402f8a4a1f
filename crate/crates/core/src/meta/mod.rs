//! Episodic bilevel training and writer adaptation: MAML, MAML with learned
//! per-layer inner rates, and MetaHTR's instance-weighted inner loss, plus
//! the last-layer fine-tuning baseline.

mod checkpoint;
mod episode;
mod inner;
mod outer;
mod protocol;
mod rates;
mod weights;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_meta, save_meta, MetaCheckpoint};
pub use episode::{batch_of, sample_episode, Episode, EpisodeData, EpisodeMode, EpisodeSampler};
pub use inner::{adapt_at_inference, finetune_baseline, inner_adapt, inner_loop, inner_loss, weighted_support_loss, InnerGraph};
pub use outer::{MetaLearner, StepReport};
pub use protocol::{episode_rng, evaluate_adaptation_premise, evaluate_conditions, evaluate_writers, Adaptation, ProtocolConfig};
pub use rates::LayerLearningRates;
pub use weights::{gradient_features, InstanceWeightNet, IW_PARAM_NAMES};

use crate::autodiff::{AutodiffError, Tensor};
use crate::data::DataError;
use crate::eval::EvalError;
use crate::models::{Arch, ModelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "maml")]
    Maml,
    #[serde(rename = "maml_llr")]
    MamlLlr,
    #[serde(rename = "metahtr")]
    MetaHtr,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Maml => "MAML",
            Variant::MamlLlr => "MAML+llr",
            Variant::MetaHtr => "MetaHTR",
        }
    }

    pub fn uses_rates(self) -> bool {
        self != Variant::Maml
    }

    pub fn uses_weights(self) -> bool {
        self == Variant::MetaHtr
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "maml" => Ok(Variant::Maml),
            "maml_llr" => Ok(Variant::MamlLlr),
            "metahtr" => Ok(Variant::MetaHtr),
            _ => Err(format!("unknown meta variant {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub shots: usize,
    pub ways: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub variant: Variant,
    pub max_grad_norm: f64,
    pub outer_dropout: bool,
    /// Hidden width of the instance-weight MLP.
    pub iw_hidden: usize,
    /// Width each gradient feature is projected to before the MLP.
    pub iw_proj: usize,
}

impl MetaConfig {
    pub fn for_arch(arch: Arch) -> Self {
        MetaConfig {
            shots: 16,
            ways: 8,
            inner_steps: 1,
            inner_lr: if arch == Arch::FPHTRLite { 1e-4 } else { 1e-3 },
            outer_lr: 1e-4,
            variant: Variant::Maml,
            max_grad_norm: 5.0,
            outer_dropout: true,
            iw_hidden: 128,
            iw_proj: 64,
        }
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |m: String| Err(MetaError::InvalidConfig(m));
        if self.shots == 0 || self.ways == 0 || self.inner_steps == 0 {
            return bad("shots, ways and inner_steps must be at least 1".into());
        }
        if !(self.inner_lr > 0.0 && self.outer_lr > 0.0) {
            return bad(format!("learning rates must be positive: inner {}, outer {}", self.inner_lr, self.outer_lr));
        }
        if !(self.max_grad_norm > 0.0) || self.iw_hidden == 0 || self.iw_proj == 0 {
            return bad("max_grad_norm, iw_hidden and iw_proj must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error("writer {writer} has {have} samples, needs at least {need}")]
    InsufficientSamples { writer: String, have: usize, need: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid meta config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    VariantMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::nn::NnError> for MetaError {
    fn from(e: crate::nn::NnError) -> Self {
        MetaError::Model(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub writer: String,
    pub method: String,
    pub inner_steps: usize,
}

/// Writer-specific parameters, aligned with the model's parameter order.
#[derive(Clone, Debug)]
pub struct AdaptedParams {
    pub params: Vec<Tensor>,
    pub provenance: Provenance,
}
