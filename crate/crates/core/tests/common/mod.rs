#![allow(dead_code)]

use htr_adapt::data::{
    default_lexicon, generate_synthetic_dataset, prepare, AugmentConfig, Dataset, GrayImage, SynthConfig,
};
use htr_adapt::models::{make_batch, Arch, Batch, Model, ModelConfig};
use htr_adapt::nn::Vocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn synth(train: usize, test: usize, words: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        train_writers: train,
        val_writers: 0,
        test_writers: test,
        words_per_writer: words,
        lexicon: default_lexicon(),
        seed,
    };
    generate_synthetic_dataset(&cfg).unwrap()
}

/// Synthetic set at model resolution.
pub fn prepared(train: usize, test: usize, words: usize, seed: u64) -> Dataset {
    synth(train, test, words, seed).map_images(|im| prepare(im, &AugmentConfig::identity())).unwrap()
}

pub fn random_image(h: usize, w: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect())
}

pub fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A tiny model over the alphabet `abc`, fast enough for gradient checks.
pub fn small(arch: Arch) -> ModelConfig {
    let mut c = if arch == Arch::FPHTRLite { ModelConfig::fphtr() } else { ModelConfig::sar() };
    c.conv_channels = vec![4, 6, 8];
    c.d_model = 8;
    c.attn_dim = 6;
    c.ff_dim = 12;
    c.heads = 2;
    c.dropout = 0.0;
    c.loss.vocab = Vocab::new("abc").unwrap();
    c
}

/// Random 16-pixel-high images labelled with random words over `abc`.
pub fn toy_batch(model: &Model, n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<GrayImage> =
        (0..n).map(|i| random_image(16, rng.random_range(12..24), seed * 1000 + i as u64)).collect();
    let texts: Vec<String> = (0..n)
        .map(|_| (0..rng.random_range(1..4)).map(|_| ['a', 'b', 'c'][rng.random_range(0..3)]).collect())
        .collect();
    let refs: Vec<&GrayImage> = images.iter().collect();
    let trefs: Vec<&str> = texts.iter().map(String::as_str).collect();
    make_batch(&refs, &trefs, &model.config.loss.vocab, model.config.max_seq_len).unwrap()
}
