use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::Tensor;
use crate::models::ForwardOut;
use crate::nn::{linear, PAD};

/// The MLP `g_psi` mapping per-character gradient features to instance
/// weights in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct InstanceWeightNet {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub proj: usize,
    pub seed: u64,
    /// `l0.weight, l0.bias, l1.weight, l1.bias, l2.weight, l2.bias`
    pub params: Vec<Tensor>,
    projection: Vec<f64>,
}

pub const IW_PARAM_NAMES: [&str; 6] = ["l0.weight", "l0.bias", "l1.weight", "l1.bias", "l2.weight", "l2.bias"];

fn projection_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("finite std");
    (0..rows * cols).map(|_| normal.sample(&mut rng)).collect()
}

impl InstanceWeightNet {
    /// `feature_dim` is the classifier input width; the projection maps each
    /// `vocab_size x feature_dim` gradient to `proj` values.
    pub fn new(vocab_size: usize, feature_dim: usize, hidden: usize, proj: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_out: usize, fan_in: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            Tensor::param([fan_out, fan_in], (0..fan_out * fan_in).map(|_| u.sample(&mut rng)).collect())
        };
        let l0 = glorot(hidden, 2 * proj);
        let l1 = glorot(hidden, hidden);
        let l2 = glorot(1, hidden);
        let params = vec![
            l0,
            Tensor::param([hidden], vec![0.0; hidden]),
            l1,
            Tensor::param([hidden], vec![0.0; hidden]),
            l2,
            Tensor::param([1], vec![0.0]),
        ];
        Self::from_params(vocab_size, feature_dim, hidden, proj, seed, params)
    }

    pub fn from_params(
        vocab_size: usize,
        feature_dim: usize,
        hidden: usize,
        proj: usize,
        seed: u64,
        params: Vec<Tensor>,
    ) -> Self {
        let projection = projection_matrix(proj, vocab_size * feature_dim, seed);
        InstanceWeightNet { vocab_size, feature_dim, hidden, proj, seed, params, projection }
    }

    /// `x` is `[T, 2 * proj]`; returns `[T]` weights.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let p = &self.params;
        let h = linear(x, &p[0], Some(&p[1])).relu();
        let h = linear(&h, &p[2], Some(&p[3])).relu();
        let t = x.shape()[0];
        linear(&h, &p[4], Some(&p[5])).sigmoid().reshape(vec![t])
    }

    /// Instance weights `[N, L]` for a support batch.
    pub fn weights(&self, out: &ForwardOut, labels: &[Vec<usize>]) -> Tensor {
        let feats = gradient_features(out, labels, &self.projection, self.proj);
        let (n, l) = (labels.len(), labels[0].len());
        self.forward(&feats).reshape(vec![n, l])
    }
}

/// Detached features `[N * L, 2 * proj]`: for each step the projected
/// gradient of its token loss w.r.t. the classifier weights, next to the
/// projected gradient of the whole (mask-normalized) loss. PAD rows are zero.
pub fn gradient_features(out: &ForwardOut, labels: &[Vec<usize>], projection: &[f64], proj: usize) -> Tensor {
    let s = out.logits.shape();
    let (n, l, v) = (s[0], s[1], s[2]);
    let f = out.features.shape()[2];
    assert_eq!(projection.len(), proj * v * f, "projection does not match classifier shape");
    let logits = out.logits.data();
    let hidden = out.features.data();
    let mut per_token = vec![0.0; n * l * proj];
    let mut total = vec![0.0; proj];
    let mut tmp = vec![0.0; f];
    for (i, seq) in labels.iter().enumerate() {
        let count = seq.iter().filter(|&&id| id != PAD).count().max(1);
        let mask = 1.0 / (count * n) as f64;
        for (j, &target) in seq.iter().enumerate() {
            if target == PAD {
                continue;
            }
            let row = &logits[(i * l + j) * v..(i * l + j + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let delta: Vec<f64> =
                row.iter().enumerate().map(|(c, x)| (x - max).exp() / z - if c == target { 1.0 } else { 0.0 }).collect();
            let h = &hidden[(i * l + j) * f..(i * l + j + 1) * f];
            let dst = &mut per_token[(i * l + j) * proj..(i * l + j + 1) * proj];
            for (k, out_k) in dst.iter_mut().enumerate() {
                let pk = &projection[k * v * f..(k + 1) * v * f];
                tmp.iter_mut().for_each(|t| *t = 0.0);
                for (c, &d) in delta.iter().enumerate() {
                    for (t, &pv) in tmp.iter_mut().zip(&pk[c * f..(c + 1) * f]) {
                        *t += d * pv;
                    }
                }
                *out_k = tmp.iter().zip(h).map(|(a, b)| a * b).sum();
                total[k] += mask * *out_k;
            }
        }
    }
    let mut data = Vec::with_capacity(n * l * 2 * proj);
    for (t, row) in per_token.chunks(proj).enumerate() {
        data.extend_from_slice(row);
        let pad = labels[t / l][t % l] == PAD;
        data.extend(total.iter().map(|&x| if pad { 0.0 } else { x }));
    }
    Tensor::new([n * l, 2 * proj], data)
}
