use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::stack_images;
use super::{Arch, Batch, Model, ModelError};
use crate::autodiff::{Tape, Tensor};
use crate::data::GrayImage;
use crate::nn::{
    batch_norm_with_mode, linear, lstm_cell, sequence_cross_entropy_batch, sin1d, sin2d, transformer_decoder_block_batched,
    Attention2DContext, Attention2DParams, AttentionParams, DecoderBlockParams, LstmWeights, RunningUpdate, StatsMode, EOS,
    SOS,
};

/// Per-call switches: where BN statistics come from, whether dropout is on,
/// and optional per-BN-layer `(delta_beta, delta_gamma)` offsets.
pub struct ForwardCtx<'a> {
    pub bn_mode: StatsMode,
    pub dropout: Option<&'a mut ChaCha8Rng>,
    pub bn_deltas: Option<&'a [(Tensor, Tensor)]>,
    /// Running statistics produced in `BatchStats` mode, one per BN layer.
    pub updates: Vec<RunningUpdate>,
}

impl<'a> ForwardCtx<'a> {
    /// Inference: frozen statistics, no dropout.
    pub fn eval() -> Self {
        ForwardCtx { bn_mode: StatsMode::RunningStats, dropout: None, bn_deltas: None, updates: Vec::new() }
    }

    /// Base training: batch statistics and dropout.
    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        ForwardCtx { bn_mode: StatsMode::BatchStats, dropout: Some(rng), bn_deltas: None, updates: Vec::new() }
    }

    /// Frozen statistics with optional dropout, as used around adaptation.
    pub fn frozen(rng: Option<&'a mut ChaCha8Rng>) -> Self {
        ForwardCtx { bn_mode: StatsMode::RunningStats, dropout: rng, bn_deltas: None, updates: Vec::new() }
    }

    pub fn with_deltas(mut self, deltas: Option<&'a [(Tensor, Tensor)]>) -> Self {
        self.bn_deltas = deltas;
        self
    }
}

/// Logits `[N, L, V]` and the classifier inputs `[N, L, F]` that produced them.
pub struct ForwardOut {
    pub logits: Tensor,
    pub features: Tensor,
}

struct P<'m> {
    model: &'m Model,
    params: &'m [Tensor],
}

impl P<'_> {
    fn get(&self, name: &str) -> &Tensor {
        match self.model.index_of(name) {
            Some(i) => &self.params[i],
            None => panic!("model has no parameter {name}"),
        }
    }

    fn lstm(&self, prefix: &str) -> LstmWeights {
        LstmWeights {
            w_ih: self.get(&format!("{prefix}.w_ih")).clone(),
            w_hh: self.get(&format!("{prefix}.w_hh")).clone(),
            bias: self.get(&format!("{prefix}.bias")).clone(),
        }
    }

    fn pair(&self, prefix: &str) -> (Tensor, Tensor) {
        (self.get(&format!("{prefix}.weight")).clone(), self.get(&format!("{prefix}.bias")).clone())
    }

    fn attention(&self, prefix: &str) -> AttentionParams {
        let (w_q, b_q) = self.pair(&format!("{prefix}.q_proj"));
        let (w_k, b_k) = self.pair(&format!("{prefix}.k_proj"));
        let (w_v, b_v) = self.pair(&format!("{prefix}.v_proj"));
        let (w_o, b_o) = self.pair(&format!("{prefix}.out_proj"));
        AttentionParams { w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o }
    }

    fn block(&self, l: usize) -> DecoderBlockParams {
        let pre = format!("decoder.{l}");
        DecoderBlockParams {
            heads: self.model.config.heads,
            self_attn: self.attention(&format!("{pre}.self_attn")),
            cross_attn: self.attention(&format!("{pre}.cross_attn")),
            ln1: self.pair(&format!("{pre}.norm1")),
            ln2: self.pair(&format!("{pre}.norm2")),
            ln3: self.pair(&format!("{pre}.norm3")),
            ff1: self.pair(&format!("{pre}.ff1")),
            ff2: self.pair(&format!("{pre}.ff2")),
        }
    }

    fn attn2d(&self) -> Attention2DParams {
        Attention2DParams {
            w_v: self.get("decoder.attn.w_v").clone(),
            neighbor: self.get("decoder.attn.neighbor").clone(),
            w_h: self.get("decoder.attn.w_h").clone(),
            w_e: self.get("decoder.attn.w_e").clone(),
        }
    }
}

fn pool_for_stage(i: usize) -> (usize, usize) {
    match i {
        0 | 1 => (2, 2),
        2 => (2, 1),
        _ => (1, 1),
    }
}

fn dropout(x: Tensor, p: f64, ctx: &mut ForwardCtx) -> Tensor {
    match ctx.dropout.as_deref_mut() {
        Some(rng) if p > 0.0 => x.dropout(p, true, rng),
        _ => x,
    }
}

impl Model {
    pub fn apply_bn_updates(&mut self, updates: &[RunningUpdate]) {
        for (st, u) in self.bn_states.iter_mut().zip(updates) {
            st.apply(u);
        }
    }

    fn backbone(&self, p: &P, images: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor, ModelError> {
        let mut h = images.clone();
        for i in 0..self.config.conv_channels.len() {
            h = h.conv2d(p.get(&format!("backbone.conv{i}.weight")), 1, 1);
            let (mut gamma, mut beta) = p.pair(&format!("backbone.bn{i}"));
            if let Some(d) = ctx.bn_deltas {
                beta = beta.add(&d[i].0);
                gamma = gamma.add(&d[i].1);
            }
            let (y, upd) = batch_norm_with_mode(&h, &gamma, &beta, &self.bn_states[i], ctx.bn_mode, true)?;
            if let Some(u) = upd {
                ctx.updates.push(u);
            }
            h = y.relu();
            let (ph, pw) = pool_for_stage(i);
            if (ph, pw) != (1, 1) && h.shape()[2] >= ph && h.shape()[3] >= pw {
                h = h.max_pool2d(ph, pw);
            }
        }
        Ok(h)
    }

    fn check_inputs(&self, images: &Tensor, inputs: &[Vec<usize>]) -> Result<(), ModelError> {
        let n = images.shape()[0];
        if inputs.len() != n || n == 0 {
            return Err(ModelError::InvalidConfig(format!("{n} images for {} sequences", inputs.len())));
        }
        let l = inputs[0].len();
        if l == 0 || inputs.iter().any(|s| s.len() != l) {
            return Err(ModelError::InvalidConfig("decoder inputs must be non-empty and equally long".into()));
        }
        if l > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: l, max: self.config.max_seq_len });
        }
        let v = self.config.vocab_size();
        if let Some(&id) = inputs.iter().flatten().find(|&&id| id >= v) {
            return Err(crate::nn::NnError::IndexOutOfVocab { id, vocab: v }.into());
        }
        Ok(())
    }

    /// Teacher-forced pass with an explicit parameter list in model order
    /// (either the model's own tensors or an adapted overlay).
    pub fn forward(
        &self,
        params: &[Tensor],
        images: &Tensor,
        inputs: &[Vec<usize>],
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardOut, ModelError> {
        assert_eq!(params.len(), self.params.len(), "parameter list does not match the model");
        self.check_inputs(images, inputs)?;
        let p = P { model: self, params };
        let feat = self.backbone(&p, images, ctx)?;
        let features = match self.config.arch {
            Arch::FPHTRLite => {
                let memory = self.fphtr_memory(&p, &feat)?;
                self.fphtr_decode(&p, &memory, inputs, ctx)?
            }
            Arch::SARLite => {
                let mut state = self.sar_start(&p, &feat)?;
                let l = inputs[0].len();
                let mut outs = Vec::with_capacity(l);
                for t in 0..l {
                    let ids: Vec<usize> = inputs.iter().map(|s| s[t]).collect();
                    let o = self.sar_step(&p, &mut state, &ids)?;
                    outs.push(o.reshape(vec![o.shape()[0], 1, o.shape()[1]]));
                }
                Tensor::concat(&outs, 1)
            }
        };
        let features = dropout(features, self.config.dropout, ctx);
        let (w, b) = p.pair("head");
        Ok(ForwardOut { logits: linear(&features, &w, Some(&b)), features })
    }

    pub fn forward_batch(&self, params: &[Tensor], batch: &Batch, ctx: &mut ForwardCtx) -> Result<ForwardOut, ModelError> {
        self.forward(params, &batch.images, &batch.inputs, ctx)
    }

    /// Mean sequence cross-entropy of a batch, optionally with per-step weights `[N, L]`.
    pub fn loss(
        &self,
        params: &[Tensor],
        batch: &Batch,
        ctx: &mut ForwardCtx,
        weights: Option<&Tensor>,
    ) -> Result<Tensor, ModelError> {
        let out = self.forward_batch(params, batch, ctx)?;
        Ok(sequence_cross_entropy_batch(&out.logits, &batch.labels, weights, self.config.loss.label_smoothing)?)
    }

    fn fphtr_memory(&self, p: &P, feat: &Tensor) -> Result<Tensor, ModelError> {
        let s = feat.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let flat = feat.reshape(vec![n, c, h * w]).permute(&[0, 2, 1]);
        let (pw, pb) = p.pair("memory_proj");
        Ok(linear(&flat, &pw, Some(&pb)).add(&sin2d(h, w, self.config.d_model)?))
    }

    fn fphtr_decode(&self, p: &P, memory: &Tensor, inputs: &[Vec<usize>], ctx: &mut ForwardCtx) -> Result<Tensor, ModelError> {
        let (n, l, d) = (inputs.len(), inputs[0].len(), self.config.d_model);
        let ids: Vec<usize> = inputs.concat();
        let emb = p.get("embed.weight").embedding(&ids).reshape(vec![n, l, d]).add(&sin1d(l, d)?);
        let pdrop = self.config.dropout;
        let mut x = dropout(emb, pdrop, ctx);
        for layer in 0..self.config.decoder_layers {
            let drop = match ctx.dropout.as_deref_mut() {
                Some(rng) if pdrop > 0.0 => Some((pdrop, rng)),
                _ => None,
            };
            x = transformer_decoder_block_batched(&x, memory, &p.block(layer), true, drop)?;
        }
        Ok(x)
    }

    fn sar_start(&self, p: &P, feat: &Tensor) -> Result<SarState, ModelError> {
        let s = feat.shape();
        let (n, c, w) = (s[0], s[1], s[3]);
        let d = self.config.d_model;
        let cols = feat.max_axis(2).permute(&[0, 2, 1]);
        let enc = p.lstm("encoder.lstm");
        let (mut h, mut cell) = (Tensor::zeros([n, d]), Tensor::zeros([n, d]));
        for t in 0..w {
            let x = cols.narrow(1, t, 1).reshape(vec![n, c]);
            (h, cell) = lstm_cell(&x, &h, &cell, &enc)?;
        }
        let layers: Vec<LstmWeights> =
            (0..self.config.decoder_layers).map(|l| p.lstm(&format!("decoder.lstm{l}"))).collect();
        let mut state = SarState {
            states: vec![(Tensor::zeros([n, d]), Tensor::zeros([n, d])); layers.len()],
            layers,
            attn: Attention2DContext::new(feat, &p.attn2d())?,
        };
        // The holistic feature is the decoder's first input; its output is unused.
        state.advance(&h)?;
        Ok(state)
    }

    fn sar_step(&self, p: &P, state: &mut SarState, ids: &[usize]) -> Result<Tensor, ModelError> {
        let x = p.get("decoder.embed.weight").embedding(ids);
        let top = state.advance(&x)?;
        let (glimpse, _) = state.attn.step(&top)?;
        Ok(Tensor::concat(&[top, glimpse], 1))
    }

    /// Greedy decoding of a stacked image batch; decoding stops at EOS or
    /// after `max_seq_len - 1` characters.
    pub fn decode(&self, params: &[Tensor], images: &Tensor, ctx: &mut ForwardCtx) -> Result<Vec<String>, ModelError> {
        Tape::no_grad(|| self.decode_inner(params, images, ctx))
    }

    fn decode_inner(&self, params: &[Tensor], images: &Tensor, ctx: &mut ForwardCtx) -> Result<Vec<String>, ModelError> {
        let p = P { model: self, params };
        let n = images.shape()[0];
        let v = self.config.vocab_size();
        let (hw, hb) = p.pair("head");
        let feat = self.backbone(&p, images, ctx)?;
        let mut seqs: Vec<Vec<usize>> = vec![vec![SOS]; n];
        let mut done = vec![false; n];
        let steps = self.config.max_seq_len.saturating_sub(1);
        let argmax = |row: &[f64]| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            best
        };
        let push = |seqs: &mut Vec<Vec<usize>>, logits: &Tensor, done: &mut Vec<bool>| {
            for (i, row) in logits.data().chunks(v).enumerate() {
                let next = if done[i] { EOS } else { argmax(row) };
                if next == EOS {
                    done[i] = true;
                }
                seqs[i].push(next);
            }
        };
        match self.config.arch {
            Arch::FPHTRLite => {
                let memory = self.fphtr_memory(&p, &feat)?;
                for _ in 0..steps {
                    if done.iter().all(|&d| d) {
                        break;
                    }
                    let x = self.fphtr_decode(&p, &memory, &seqs, ctx)?;
                    let last = x.narrow(1, seqs[0].len() - 1, 1).reshape(vec![n, self.config.d_model]);
                    push(&mut seqs, &linear(&last, &hw, Some(&hb)), &mut done);
                }
            }
            Arch::SARLite => {
                let mut state = self.sar_start(&p, &feat)?;
                for _ in 0..steps {
                    if done.iter().all(|&d| d) {
                        break;
                    }
                    let ids: Vec<usize> = seqs.iter().map(|s| *s.last().expect("non-empty")).collect();
                    let o = self.sar_step(&p, &mut state, &ids)?;
                    push(&mut seqs, &linear(&o, &hw, Some(&hb)), &mut done);
                }
            }
        }
        let vocab = &self.config.loss.vocab;
        Ok(seqs.iter().map(|s| vocab.decode(&s[1..])).collect())
    }
}

struct SarState {
    layers: Vec<LstmWeights>,
    states: Vec<(Tensor, Tensor)>,
    attn: Attention2DContext,
}

impl SarState {
    fn advance(&mut self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut input = x.clone();
        for (w, st) in self.layers.iter().zip(self.states.iter_mut()) {
            *st = lstm_cell(&input, &st.0, &st.1, w)?;
            input = st.0.clone();
        }
        Ok(input)
    }
}

/// Logits `[L, V]` for one image and a target prefix beginning with SOS.
/// `training` turns on dropout (seeded by `seed`) and batch statistics.
pub fn forward_teacher_forcing(
    model: &Model,
    image: &GrayImage,
    target: &[usize],
    training: bool,
    seed: u64,
) -> Result<Tensor, ModelError> {
    if target.first() != Some(&SOS) {
        return Err(ModelError::InvalidConfig("target must begin with SOS".into()));
    }
    let images = stack_images(&[image])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = if training { ForwardCtx::train(&mut rng) } else { ForwardCtx::eval() };
    let out = model.forward(&model.params, &images, &[target.to_vec()], &mut ctx)?;
    let (l, v) = (target.len(), model.config.vocab_size());
    Ok(out.logits.reshape(vec![l, v]))
}

pub fn decode_greedy(model: &Model, image: &GrayImage) -> Result<String, ModelError> {
    Ok(decode_greedy_batch(model, &[image])?.remove(0))
}

pub fn decode_greedy_batch(model: &Model, images: &[&GrayImage]) -> Result<Vec<String>, ModelError> {
    let stacked = stack_images(images)?;
    model.decode(&model.params, &stacked, &mut ForwardCtx::eval())
}
