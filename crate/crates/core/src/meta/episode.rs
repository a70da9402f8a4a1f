use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MetaError;
use crate::data::{Dataset, ImagePipeline, Split};
use crate::models::{make_batch, Batch, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeMode {
    /// `2K` samples split evenly into support and query.
    Train,
    /// `K` support samples, every other sample of the writer as query.
    Test,
}

/// Sample indices into a [`Dataset`], all from one writer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub writer: String,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// An episode with its support and query batches materialized.
#[derive(Clone, Debug)]
pub struct EpisodeData {
    pub episode: Episode,
    pub support: Batch,
    pub query: Batch,
}

pub fn sample_episode(
    dataset: &Dataset,
    writer: &str,
    shots: usize,
    mode: EpisodeMode,
    rng: &mut impl Rng,
) -> Result<Episode, MetaError> {
    let mut idx = dataset.indices_of(writer);
    let need = match mode {
        EpisodeMode::Train => 2 * shots,
        EpisodeMode::Test => shots + 1,
    };
    if shots == 0 || idx.len() < need {
        return Err(MetaError::InsufficientSamples { writer: writer.to_string(), have: idx.len(), need });
    }
    idx.shuffle(rng);
    let query_end = match mode {
        EpisodeMode::Train => 2 * shots,
        EpisodeMode::Test => idx.len(),
    };
    Ok(Episode { writer: writer.to_string(), support: idx[..shots].to_vec(), query: idx[shots..query_end].to_vec() })
}

/// Builds a batch from dataset indices. With `rng` the pipeline's training
/// path (augmentation) is used, otherwise images are only prepared.
pub fn batch_of(
    config: &ModelConfig,
    dataset: &Dataset,
    indices: &[usize],
    pipeline: &ImagePipeline,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Batch, MetaError> {
    let mut images = Vec::with_capacity(indices.len());
    for &i in indices {
        let raw = &dataset.samples[i].image;
        images.push(match rng.as_deref_mut() {
            Some(r) => pipeline.train_image(raw, r),
            None => pipeline.eval_image(raw),
        });
    }
    let texts: Vec<&str> = indices.iter().map(|&i| dataset.samples[i].text.as_str()).collect();
    let refs: Vec<_> = images.iter().collect();
    Ok(make_batch(&refs, &texts, &config.loss.vocab, config.max_seq_len)?)
}

impl EpisodeData {
    pub fn build(
        config: &ModelConfig,
        dataset: &Dataset,
        episode: Episode,
        pipeline: &ImagePipeline,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Self, MetaError> {
        let support = batch_of(config, dataset, &episode.support, pipeline, rng.as_deref_mut())?;
        let query = batch_of(config, dataset, &episode.query, pipeline, rng)?;
        Ok(EpisodeData { episode, support, query })
    }
}

/// Draws `ways` distinct training writers per meta step and one train-mode
/// episode for each, with augmented images.
pub struct EpisodeSampler {
    pub writers: Vec<String>,
    pub shots: usize,
    pub ways: usize,
    pub pipeline: ImagePipeline,
    pub rng: ChaCha8Rng,
}

impl EpisodeSampler {
    /// Only writers with at least `2 * shots` samples in `split` are eligible.
    pub fn new(
        dataset: &Dataset,
        split: Split,
        shots: usize,
        ways: usize,
        pipeline: ImagePipeline,
        seed: u64,
    ) -> Result<Self, MetaError> {
        let all = dataset.writers(split);
        let writers: Vec<String> =
            all.into_iter().filter(|w| dataset.indices_of(w).len() >= 2 * shots).collect();
        if writers.len() < ways {
            return Err(MetaError::InvalidConfig(format!(
                "{} writers in {} have {} samples, {ways} needed per meta step",
                writers.len(),
                split.as_str(),
                2 * shots
            )));
        }
        Ok(EpisodeSampler { writers, shots, ways, pipeline, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn next(&mut self, config: &ModelConfig, dataset: &Dataset) -> Result<Vec<EpisodeData>, MetaError> {
        let picks = rand::seq::index::sample(&mut self.rng, self.writers.len(), self.ways).into_vec();
        let mut out = Vec::with_capacity(self.ways);
        for w in picks {
            let ep = sample_episode(dataset, &self.writers[w], self.shots, EpisodeMode::Train, &mut self.rng)?;
            out.push(EpisodeData::build(config, dataset, ep, &self.pipeline, Some(&mut self.rng))?);
        }
        Ok(out)
    }
}
