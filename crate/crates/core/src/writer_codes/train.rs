use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CodeAdapter, CodeKind, Codebook, WriterCode, WriterCodeError};
use crate::autodiff::{gradients, Tensor};
use crate::data::{Dataset, ImagePipeline};
use crate::models::{make_batch, Batch, ForwardCtx, Model, ModelConfig};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Adapter learning rate.
    pub lr: f64,
    /// Learning rate of trainable code values.
    pub code_lr: f64,
    /// Gradient steps when fitting a code for an unseen writer.
    pub new_code_steps: usize,
}

impl Default for CodeTrainConfig {
    fn default() -> Self {
        CodeTrainConfig { steps: 200, batch_size: 16, lr: 1e-3, code_lr: 1e-3, new_code_steps: 3 }
    }
}

/// A batch whose samples all come from `writer`.
#[derive(Clone, Debug)]
pub struct CodeBatch {
    pub writer: String,
    pub batch: Batch,
}

pub fn writer_batch(
    config: &ModelConfig,
    dataset: &Dataset,
    indices: &[usize],
    pipeline: &ImagePipeline,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<CodeBatch, WriterCodeError> {
    let first = indices.first().ok_or_else(|| WriterCodeError::InvalidInput("empty batch".into()))?;
    let writer = &dataset.samples[*first].writer;
    if let Some(other) = indices.iter().map(|&i| &dataset.samples[i].writer).find(|w| *w != writer) {
        return Err(WriterCodeError::MixedWriterBatch(writer.clone(), other.clone()));
    }
    let images: Vec<_> = indices
        .iter()
        .map(|&i| match rng.as_deref_mut() {
            Some(r) => pipeline.train_image(&dataset.samples[i].image, r),
            None => pipeline.eval_image(&dataset.samples[i].image),
        })
        .collect();
    let refs: Vec<_> = images.iter().collect();
    let texts: Vec<&str> = indices.iter().map(|&i| dataset.samples[i].text.as_str()).collect();
    Ok(CodeBatch { writer: writer.clone(), batch: make_batch(&refs, &texts, &config.loss.vocab, config.max_seq_len)? })
}

/// Draws a writer uniformly, then up to `batch_size` of its samples.
pub fn sample_writer_batch(
    config: &ModelConfig,
    dataset: &Dataset,
    writers: &[String],
    batch_size: usize,
    pipeline: &ImagePipeline,
    rng: &mut ChaCha8Rng,
) -> Result<CodeBatch, WriterCodeError> {
    let w = &writers[rng.random_range(0..writers.len())];
    let all = dataset.indices_of(w);
    let picks: Vec<usize> = sample(rng, all.len(), batch_size.min(all.len())).into_iter().map(|i| all[i]).collect();
    writer_batch(config, dataset, &picks, pipeline, Some(rng))
}

fn code_tensor(code: &WriterCode, trainable: bool) -> Tensor {
    if trainable {
        Tensor::param([code.values.len()], code.values.clone())
    } else {
        Tensor::new([code.values.len()], code.values.clone())
    }
}

/// Loss of a batch under the adapter's offsets for `code`, frozen BN, no dropout.
pub fn support_loss_with_code(
    model: &Model,
    adapter: &CodeAdapter,
    batch: &Batch,
    code: &[f64],
) -> Result<f64, WriterCodeError> {
    let deltas = adapter.deltas(&Tensor::new([code.len()], code.to_vec()))?;
    let mut ctx = ForwardCtx::eval().with_deltas(Some(&deltas));
    Ok(model.loss(&model.params, batch, &mut ctx, None)?.item())
}

/// Trains the adapter and (for learned and style kinds) the code values on
/// writer-pure batches; the model is only read. Returns the loss per step.
pub fn train_codes(
    model: &Model,
    book: &mut Codebook,
    cfg: &CodeTrainConfig,
    mut next_batch: impl FnMut(usize, &mut ChaCha8Rng) -> Result<CodeBatch, WriterCodeError>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, WriterCodeError> {
    let trainable = book.kind.trainable();
    let mut adapter_opt = Adam::for_tensors(cfg.lr, &book.adapter.params);
    let mut code_opts: Vec<Adam> = book.codes.iter().map(|c| Adam::new(cfg.code_lr, &[c.values.len()])).collect();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let cb = next_batch(step, rng)?;
        let idx = book.code_index(&cb.writer)?;
        let code = code_tensor(&book.codes[idx], trainable);
        let deltas = book.adapter.deltas(&code)?;
        let loss = {
            let mut ctx = ForwardCtx::frozen(Some(&mut *rng)).with_deltas(Some(&deltas));
            model.loss(&model.params, &cb.batch, &mut ctx, None)?
        };
        if !loss.item().is_finite() {
            log::warn!("code training step {step}: non-finite loss, skipped");
            losses.push(loss.item());
            continue;
        }
        let mut wrt = book.adapter.params.clone();
        if trainable {
            wrt.push(code.clone());
        }
        let g = gradients(&loss, &wrt, false)?;
        let grads: Vec<Vec<f64>> = g.iter().map(Tensor::to_vec).collect();
        let n = book.adapter.params.len();
        adapter_opt.step_tensors(&mut book.adapter.params, &grads[..n]);
        if trainable {
            code_opts[idx].step(std::slice::from_mut(&mut book.codes[idx].values), &grads[n..]);
        }
        losses.push(loss.item());
    }
    Ok(losses)
}

/// A code for an unseen writer: a draw from `N(0, sigma^2)` refined by
/// `steps` Adam steps on the support loss, with the adapter held fixed.
pub fn init_new_writer_code(
    model: &Model,
    adapter: &CodeAdapter,
    support: &CodeBatch,
    steps: usize,
    lr: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<WriterCode, WriterCodeError> {
    if support.batch.is_empty() {
        return Err(WriterCodeError::InsufficientSamples { writer: support.writer.clone(), have: 0, need: 1 });
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| WriterCodeError::InvalidInput(e.to_string()))?;
    let mut values: Vec<f64> = (0..adapter.code_dim).map(|_| normal.sample(rng)).collect();
    let mut opt = Adam::new(lr, &[values.len()]);
    for _ in 0..steps {
        let code = Tensor::param([values.len()], values.clone());
        let deltas = adapter.deltas(&code)?;
        let mut ctx = ForwardCtx::eval().with_deltas(Some(&deltas));
        let loss = model.loss(&model.params, &support.batch, &mut ctx, None)?;
        if !loss.item().is_finite() {
            break;
        }
        let g = gradients(&loss, &[code], false)?;
        opt.step(std::slice::from_mut(&mut values), &[g.at(0).to_vec()]);
    }
    Ok(WriterCode { kind: CodeKind::Learned, id: support.writer.clone(), values })
}
