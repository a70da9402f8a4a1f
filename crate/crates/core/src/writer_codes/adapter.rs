use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::WriterCodeError;
use crate::autodiff::Tensor;
use crate::nn::{batch_norm_with_mode, linear, BatchNormState, StatsMode};

/// For every BN layer, two MLPs `code -> hidden (tanh) -> channels` that
/// predict offsets to beta and gamma. Output layers start at zero.
#[derive(Clone, Debug)]
pub struct CodeAdapter {
    pub code_dim: usize,
    pub hidden: usize,
    pub channels: Vec<usize>,
    /// Per layer: beta l0 weight, l0 bias, l1 weight, l1 bias, then the same for gamma.
    pub params: Vec<Tensor>,
}

const PER_LAYER: usize = 8;

impl CodeAdapter {
    pub fn new(code_dim: usize, channels: &[usize], hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(channels.len() * PER_LAYER);
        for &c in channels {
            for _ in 0..2 {
                let a = (6.0 / (code_dim + hidden) as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a).expect("finite bound");
                params.push(Tensor::param([hidden, code_dim], (0..hidden * code_dim).map(|_| u.sample(&mut rng)).collect()));
                params.push(Tensor::param([hidden], vec![0.0; hidden]));
                params.push(Tensor::param([c, hidden], vec![0.0; c * hidden]));
                params.push(Tensor::param([c], vec![0.0; c]));
            }
        }
        CodeAdapter { code_dim, hidden, channels: channels.to_vec(), params }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.params.len());
        for i in 0..self.channels.len() {
            for target in ["beta", "gamma"] {
                for p in ["l0.weight", "l0.bias", "l1.weight", "l1.bias"] {
                    out.push(format!("bn{i}.{target}.{p}"));
                }
            }
        }
        out
    }

    fn mlp(&self, code: &Tensor, at: usize) -> Tensor {
        let p = &self.params[at..at + 4];
        let x = code.reshape(vec![1, self.code_dim]);
        let h = linear(&x, &p[0], Some(&p[1])).tanh();
        let out = linear(&h, &p[2], Some(&p[3]));
        let c = out.shape()[1];
        out.reshape(vec![c])
    }

    /// `(delta_beta, delta_gamma)` for one BN layer.
    pub fn layer_deltas(&self, code: &Tensor, layer: usize) -> Result<(Tensor, Tensor), WriterCodeError> {
        if code.shape() != [self.code_dim] {
            return Err(WriterCodeError::ShapeMismatch(format!("code {:?}, adapter expects [{}]", code.shape(), self.code_dim)));
        }
        if layer >= self.channels.len() {
            return Err(WriterCodeError::ShapeMismatch(format!("adapter has {} layers, asked for {layer}", self.channels.len())));
        }
        let base = layer * PER_LAYER;
        Ok((self.mlp(code, base), self.mlp(code, base + 4)))
    }

    /// Offsets for every BN layer, in backbone order.
    pub fn deltas(&self, code: &Tensor) -> Result<Vec<(Tensor, Tensor)>, WriterCodeError> {
        (0..self.channels.len()).map(|l| self.layer_deltas(code, l)).collect()
    }
}

/// Batch normalization whose affine parameters are shifted by the adapter's
/// prediction for `code`; `gamma` and `beta` themselves are left alone.
#[allow(clippy::too_many_arguments)]
pub fn conditional_bn_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BatchNormState,
    adapter: &CodeAdapter,
    layer: usize,
    code: &Tensor,
    mode: StatsMode,
) -> Result<Tensor, WriterCodeError> {
    let (db, dg) = adapter.layer_deltas(code, layer)?;
    if db.shape() != beta.shape() {
        return Err(WriterCodeError::ShapeMismatch(format!("adapter layer {layer} predicts {:?}, BN has {:?}", db.shape(), beta.shape())));
    }
    Ok(batch_norm_with_mode(x, &gamma.add(&dg), &beta.add(&db), state, mode, false)?.0)
}
