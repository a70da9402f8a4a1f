use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{finetune_baseline, sample_episode, EpisodeData, EpisodeMode, MetaError, MetaLearner};
use crate::autodiff::Tensor;
use crate::data::{Dataset, ImagePipeline, Split};
use crate::eval::{cer_wer, EvalReport, PairedReport, WriterRow};
use crate::models::{stack_images, ForwardCtx, Model};

/// Test-time protocol: every writer is evaluated `runs` times, each on a
/// fresh support/query split of its samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub shots: usize,
    pub runs: usize,
    pub seed: u64,
    pub decode_batch: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { shots: 16, runs: 10, seed: 0, decode_batch: 32 }
    }
}

/// What happens with the support set before decoding the query set.
#[derive(Clone, Copy, Debug)]
pub enum Adaptation<'a> {
    None,
    Meta(&'a MetaLearner),
    Finetune { steps: usize, lr: f64 },
}

impl Adaptation<'_> {
    pub fn label(&self) -> String {
        match self {
            Adaptation::None => "base".into(),
            Adaptation::Meta(l) => l.config.variant.label().into(),
            Adaptation::Finetune { .. } => "finetune".into(),
        }
    }

    pub fn params(&self, model: &Model, episode: &EpisodeData) -> Result<Vec<Tensor>, MetaError> {
        Ok(match self {
            Adaptation::None => model.params.clone(),
            Adaptation::Meta(l) => l.adapt(model, episode)?.params,
            Adaptation::Finetune { steps, lr } => finetune_baseline(model, episode, *steps, *lr)?.params,
        })
    }
}

fn decode_query(
    model: &Model,
    params: &[Tensor],
    dataset: &Dataset,
    episode: &EpisodeData,
    pipeline: &ImagePipeline,
    chunk: usize,
) -> Result<Vec<String>, MetaError> {
    let mut preds = Vec::with_capacity(episode.episode.query.len());
    for idx in episode.episode.query.chunks(chunk.max(1)) {
        let images: Vec<_> = idx.iter().map(|&i| pipeline.eval_image(&dataset.samples[i].image)).collect();
        let refs: Vec<_> = images.iter().collect();
        preds.extend(model.decode(params, &stack_images(&refs)?, &mut ForwardCtx::eval())?);
    }
    Ok(preds)
}

/// RNG of one writer's `run`-th test episode, shared by every protocol.
pub fn episode_rng(seed: u64, writer: usize, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((writer as u64) << 32) | run as u64);
    rng
}

/// Evaluates several adaptation conditions on identical episodes. Returns
/// one report per condition, rows in writer order.
pub fn evaluate_conditions(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    pipeline: &ImagePipeline,
    conditions: &[Adaptation],
    pc: &ProtocolConfig,
) -> Result<Vec<EvalReport>, MetaError> {
    let writers = dataset.writers(split);
    let mut rows: Vec<Vec<WriterRow>> = vec![Vec::new(); conditions.len()];
    for (wi, writer) in writers.iter().enumerate() {
        let mut sums = vec![(0.0, 0.0); conditions.len()];
        let mut n_query = 0;
        for run in 0..pc.runs {
            let mut rng = episode_rng(pc.seed, wi, run);
            let ep = sample_episode(dataset, writer, pc.shots, EpisodeMode::Test, &mut rng)?;
            n_query = ep.query.len();
            let data = EpisodeData::build(&model.config, dataset, ep, pipeline, None)?;
            let refs: Vec<String> = data.episode.query.iter().map(|&i| dataset.samples[i].text.clone()).collect();
            for (c, cond) in conditions.iter().enumerate() {
                let params = cond.params(model, &data)?;
                let preds = decode_query(model, &params, dataset, &data, pipeline, pc.decode_batch)?;
                let (cer, wer) = cer_wer(&preds, &refs)?;
                sums[c].0 += cer;
                sums[c].1 += wer;
            }
        }
        let runs = pc.runs.max(1) as f64;
        for (c, (cer, wer)) in sums.into_iter().enumerate() {
            rows[c].push(WriterRow { writer: writer.clone(), n_query, wer: wer / runs, cer: cer / runs });
        }
    }
    Ok(conditions.iter().zip(rows).map(|(c, r)| EvalReport::new(c.label(), r)).collect())
}

pub fn evaluate_writers(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    pipeline: &ImagePipeline,
    adaptation: Adaptation,
    pc: &ProtocolConfig,
) -> Result<EvalReport, MetaError> {
    Ok(evaluate_conditions(model, dataset, split, pipeline, &[adaptation], pc)?.remove(0))
}

/// WER with and without test-time adaptation on the same query sets, with a
/// Welch test over the per-writer means.
pub fn evaluate_adaptation_premise(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    pipeline: &ImagePipeline,
    learner: &MetaLearner,
    pc: &ProtocolConfig,
) -> Result<PairedReport, MetaError> {
    let mut reports =
        evaluate_conditions(model, dataset, split, pipeline, &[Adaptation::Meta(learner), Adaptation::None], pc)?;
    let mut without = reports.pop().expect("two conditions");
    let mut with = reports.pop().expect("two conditions");
    with.condition = format!("{} (adapted)", learner.config.variant.label());
    without.condition = format!("{} (not adapted)", learner.config.variant.label());
    Ok(PairedReport::pair(with, without)?)
}
