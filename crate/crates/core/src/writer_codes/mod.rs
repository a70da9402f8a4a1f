//! Writer codes: compact per-writer (or per-style) vectors injected into a
//! frozen recognizer through conditional batch normalization.

mod adapter;
mod codebook;
mod hinge;
mod kmeans;
mod protocol;
mod train;

use serde::{Deserialize, Serialize};

pub use adapter::{conditional_bn_forward, CodeAdapter};
pub use codebook::{load_codebook, mean_hinge, save_codebook, Codebook, CODEBOOK_VERSION};
pub use hinge::{hinge_histogram, hinge_index, otsu_threshold, trace_contours, HINGE_BINS, HINGE_DIM, LEG_LENGTH, MIN_CONTOUR_PIXELS};
pub use kmeans::{build_style_clusters, kmeans, nearest, KMeansResult, StyleClusters};
pub use protocol::evaluate_codes;
pub use train::{
    init_new_writer_code, sample_writer_batch, support_loss_with_code, train_codes, writer_batch, CodeBatch, CodeTrainConfig,
};

use crate::models::ModelError;

/// Standard deviation of freshly drawn learnable codes.
pub const INIT_SIGMA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeKind {
    #[serde(rename = "learned")]
    Learned,
    #[serde(rename = "hinge")]
    Hinge,
    #[serde(rename = "style")]
    Style,
    #[serde(rename = "zero")]
    Zero,
}

impl CodeKind {
    /// Code width: learned vectors are 64-d, Hinge histograms 465-d. The zero
    /// control shares the Hinge width so its adapter is the same network.
    pub fn default_dim(self) -> usize {
        match self {
            CodeKind::Learned | CodeKind::Style => 64,
            CodeKind::Hinge | CodeKind::Zero => HINGE_DIM,
        }
    }

    /// Whether code values receive gradient updates.
    pub fn trainable(self) -> bool {
        matches!(self, CodeKind::Learned | CodeKind::Style)
    }

    pub fn label(self) -> &'static str {
        match self {
            CodeKind::Learned => "learned",
            CodeKind::Hinge => "hinge",
            CodeKind::Style => "style",
            CodeKind::Zero => "zero",
        }
    }
}

impl std::str::FromStr for CodeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "learned" => Ok(CodeKind::Learned),
            "hinge" => Ok(CodeKind::Hinge),
            "style" => Ok(CodeKind::Style),
            "zero" => Ok(CodeKind::Zero),
            _ => Err(format!("unknown code kind {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterCode {
    pub kind: CodeKind,
    /// Writer id, or `cluster<i>` for style codes.
    pub id: String,
    pub values: Vec<f64>,
}

impl WriterCode {
    pub fn zero(dim: usize) -> Self {
        WriterCode { kind: CodeKind::Zero, id: "zero".into(), values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WriterCodeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch mixes writers {0} and {1}")]
    MixedWriterBatch(String, String),
    #[error("writer {writer} has {have} samples, needs at least {need}")]
    InsufficientSamples { writer: String, have: usize, need: usize },
    #[error("only {found} contour pixels, at least {needed} required")]
    InsufficientInk { found: usize, needed: usize },
    #[error("k-means left an empty cluster after {restarts} restarts")]
    DegenerateClustering { restarts: usize },
    #[error("no code for writer {0}")]
    UnknownWriter(String),
    #[error("{0}")]
    InvalidInput(String),
    #[error("codebook: {0}")]
    Codebook(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::nn::NnError> for WriterCodeError {
    fn from(e: crate::nn::NnError) -> Self {
        WriterCodeError::Model(e.into())
    }
}

impl From<crate::autodiff::AutodiffError> for WriterCodeError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        WriterCodeError::InvalidInput(e.to_string())
    }
}
