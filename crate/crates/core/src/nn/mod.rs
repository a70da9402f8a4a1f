//! Layers shared by the recognizers. Every layer is a pure function of its
//! parameters and inputs.

mod attention2d;
mod batch_norm;
mod loss;
mod lstm;
mod posenc;
mod transformer;

pub use attention2d::{attention_2d, Attention2DContext, Attention2DParams};
pub use batch_norm::{batch_norm, batch_norm_with_mode, BatchNormState, RunningUpdate, StatsMode};
pub use loss::{sequence_cross_entropy, sequence_cross_entropy_batch, token_nll, LossSpec, Vocab, EOS, PAD, SOS};
pub use lstm::{lstm_cell, LstmWeights};
pub use posenc::{positional_encoding, sin1d, sin2d, PosEncKind};
pub use transformer::{
    layer_norm, multi_head_attention, transformer_decoder_block, transformer_decoder_block_batched, AttentionParams,
    DecoderBlockParams,
};

use crate::autodiff::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch statistics need at least two values per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("positional encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    IndexOutOfVocab { id: usize, vocab: usize },
}

/// `x W^T + b` for `x` of shape `[.., in]`, `w` of shape `[out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let s = x.shape().to_vec();
    let rows = x.flatten_rows();
    let mut y = rows.matmul_t(w, false, true);
    if let Some(b) = b {
        y = y.add(b);
    }
    let mut out = s;
    *out.last_mut().expect("linear on scalar") = w.shape()[0];
    y.reshape(out)
}
