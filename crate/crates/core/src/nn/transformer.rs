use rand_chacha::ChaCha8Rng;

use super::{linear, NnError};
use crate::autodiff::Tensor;

const MASKED: f64 = -1e9;

/// Projections of one multi-head attention layer. All weights are `[D, D]`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

/// A post-norm decoder block: self-attention, cross-attention, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlockParams {
    pub heads: usize,
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub ln1: (Tensor, Tensor),
    pub ln2: (Tensor, Tensor),
    pub ln3: (Tensor, Tensor),
    /// `[F, D]`, `[F]`
    pub ff1: (Tensor, Tensor),
    /// `[D, F]`, `[D]`
    pub ff2: (Tensor, Tensor),
}

/// Normalizes the last axis, then scales and shifts.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let axis = x.ndim() - 1;
    let mean = x.mean_axis(axis, true);
    let c = x.sub(&mean);
    let var = c.square().mean_axis(axis, true);
    c.mul(&var.add_scalar(eps).powf(-0.5)).mul(gamma).add(beta)
}

fn split_heads(x: &Tensor, heads: usize) -> Tensor {
    let s = x.shape();
    let (n, t, d) = (s[0], s[1], s[2]);
    x.reshape(vec![n, t, heads, d / heads]).permute(&[0, 2, 1, 3]).reshape(vec![n * heads, t, d / heads])
}

/// Scaled dot-product attention of `query` `[N, T, D]` over `kv` `[N, S, D]`.
/// Returns the projected output and the weights `[N, heads, T, S]`.
pub fn multi_head_attention(
    query: &Tensor,
    kv: &Tensor,
    p: &AttentionParams,
    heads: usize,
    causal: bool,
) -> Result<(Tensor, Tensor), NnError> {
    let (qs, ks) = (query.shape(), kv.shape());
    let d = p.w_q.shape()[0];
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != d || ks[2] != d || heads == 0 || d % heads != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "attention: query {qs:?}, memory {ks:?}, d_model {d}, heads {heads}"
        )));
    }
    let (n, t, s) = (qs[0], qs[1], ks[1]);
    let dh = d / heads;
    let q = split_heads(&linear(query, &p.w_q, Some(&p.b_q)), heads);
    let k = split_heads(&linear(kv, &p.w_k, Some(&p.b_k)), heads);
    let v = split_heads(&linear(kv, &p.w_v, Some(&p.b_v)), heads);
    let mut scores = q.matmul_t(&k, false, true).scale(1.0 / (dh as f64).sqrt());
    if causal {
        let mask: Vec<f64> = (0..t * s).map(|i| if i % s > i / s { MASKED } else { 0.0 }).collect();
        scores = scores.add(&Tensor::new([t, s], mask));
    }
    let alpha = scores.softmax(2);
    let ctx = alpha.matmul(&v).reshape(vec![n, heads, t, dh]).permute(&[0, 2, 1, 3]).reshape(vec![n, t, d]);
    Ok((linear(&ctx, &p.w_o, Some(&p.b_o)), alpha.reshape(vec![n, heads, t, s])))
}

fn drop(x: Tensor, dropout: &mut Option<(f64, &mut ChaCha8Rng)>) -> Tensor {
    match dropout {
        Some((pr, rng)) => x.dropout(*pr, true, *rng),
        None => x,
    }
}

/// Decoder block over a batch: `tokens` `[N, T, D]`, `memory` `[N, S, D]`.
/// Dropout is applied to each sublayer output when `dropout` is given.
pub fn transformer_decoder_block_batched(
    tokens: &Tensor,
    memory: &Tensor,
    p: &DecoderBlockParams,
    causal: bool,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Tensor, NnError> {
    let (sa, _) = multi_head_attention(tokens, tokens, &p.self_attn, p.heads, causal)?;
    let x = layer_norm(&tokens.add(&drop(sa, &mut dropout)), &p.ln1.0, &p.ln1.1, 1e-5);
    let (ca, _) = multi_head_attention(&x, memory, &p.cross_attn, p.heads, false)?;
    let x = layer_norm(&x.add(&drop(ca, &mut dropout)), &p.ln2.0, &p.ln2.1, 1e-5);
    let ff = linear(&linear(&x, &p.ff1.0, Some(&p.ff1.1)).relu(), &p.ff2.0, Some(&p.ff2.1));
    Ok(layer_norm(&x.add(&drop(ff, &mut dropout)), &p.ln3.0, &p.ln3.1, 1e-5))
}

/// Single-sequence form: `tokens` `[T, D]`, `memory` `[S, D]`.
pub fn transformer_decoder_block(
    tokens: &Tensor,
    memory: &Tensor,
    p: &DecoderBlockParams,
    causal: bool,
) -> Result<Tensor, NnError> {
    if tokens.ndim() != 2 || memory.ndim() != 2 {
        return Err(NnError::ShapeMismatch(format!(
            "decoder block: tokens {:?}, memory {:?}",
            tokens.shape(),
            memory.shape()
        )));
    }
    let (t, d) = (tokens.shape()[0], tokens.shape()[1]);
    let x = tokens.reshape(vec![1, t, d]);
    let m = memory.reshape(vec![1, memory.shape()[0], memory.shape()[1]]);
    Ok(transformer_decoder_block_batched(&x, &m, p, causal, None)?.reshape(vec![t, d]))
}
