use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Arch, Model, ModelConfig, ModelError};
use crate::autodiff::Tensor;
use crate::nn::BatchNormState;

struct Builder {
    rng: ChaCha8Rng,
    named: Vec<(String, Tensor)>,
}

impl Builder {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) {
        let n = shape.iter().product();
        let v = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.named.push((name, Tensor::param(shape, v)));
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, value: f64) {
        let n = shape.iter().product();
        self.named.push((name, Tensor::param(shape, vec![value; n])));
    }

    /// Glorot-uniform weight `[out, in]` plus zero bias.
    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, bias: bool) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(format!("{prefix}.weight"), vec![fan_out, fan_in], bound);
        if bias {
            self.constant(format!("{prefix}.bias"), vec![fan_out], 0.0);
        }
    }

    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64) {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let v = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.named.push((name, Tensor::param(shape, v)));
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) {
        let bound = 1.0 / (hidden as f64).sqrt();
        self.uniform(format!("{prefix}.w_ih"), vec![4 * hidden, input], bound);
        self.uniform(format!("{prefix}.w_hh"), vec![4 * hidden, hidden], bound);
        // Forget-gate bias starts at 1.
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        self.named.push((format!("{prefix}.bias"), Tensor::param([4 * hidden], b)));
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.constant(format!("{prefix}.weight"), vec![d], 1.0);
        self.constant(format!("{prefix}.bias"), vec![d], 0.0);
    }
}

pub(super) fn build(config: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
    let mut b = Builder { rng: ChaCha8Rng::seed_from_u64(seed), named: Vec::new() };
    let mut bn_states = Vec::new();
    let mut in_ch = 1;
    for (i, &c) in config.conv_channels.iter().enumerate() {
        let bound = (6.0 / (in_ch * 9) as f64).sqrt();
        b.uniform(format!("backbone.conv{i}.weight"), vec![c, in_ch, 3, 3], bound);
        b.constant(format!("backbone.bn{i}.weight"), vec![c], 1.0);
        b.constant(format!("backbone.bn{i}.bias"), vec![c], 0.0);
        bn_states.push(BatchNormState::new(c));
        in_ch = c;
    }
    let d = config.d_model;
    let v = config.vocab_size();
    match config.arch {
        Arch::FPHTRLite => {
            b.linear("memory_proj", in_ch, d, true);
            b.normal("embed.weight".into(), vec![v, d], 1.0);
            for l in 0..config.decoder_layers {
                for part in ["self_attn", "cross_attn"] {
                    for proj in ["q_proj", "k_proj", "v_proj", "out_proj"] {
                        b.linear(&format!("decoder.{l}.{part}.{proj}"), d, d, true);
                    }
                }
                for norm in ["norm1", "norm2", "norm3"] {
                    b.layer_norm(&format!("decoder.{l}.{norm}"), d);
                }
                b.linear(&format!("decoder.{l}.ff1"), d, config.ff_dim, true);
                b.linear(&format!("decoder.{l}.ff2"), config.ff_dim, d, true);
            }
            b.linear("head", d, v, true);
        }
        Arch::SARLite => {
            let a = config.attn_dim;
            b.lstm("encoder.lstm", in_ch, d);
            b.normal("decoder.embed.weight".into(), vec![v, d], 1.0);
            for l in 0..config.decoder_layers {
                b.lstm(&format!("decoder.lstm{l}"), d, d);
            }
            let bound = (6.0 / (in_ch + a) as f64).sqrt();
            b.uniform("decoder.attn.w_v".into(), vec![a, in_ch], bound);
            b.uniform("decoder.attn.neighbor".into(), vec![a, in_ch, 3, 3], bound / 3.0);
            b.uniform("decoder.attn.w_h".into(), vec![a, d], (6.0 / (a + d) as f64).sqrt());
            b.uniform("decoder.attn.w_e".into(), vec![a], (3.0 / a as f64).sqrt());
            b.linear("head", d + in_ch, v, true);
        }
    }
    Model::from_parts(config.clone(), b.named, bn_states)
}
