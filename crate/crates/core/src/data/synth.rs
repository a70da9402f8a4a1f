use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::font::{advance, glyph};
use super::{DataError, Dataset, GrayImage, Sample, Split};

/// Height of rendered word images before any downscaling.
pub const RAW_HEIGHT: usize = 32;
const BASELINE: f64 = 22.0;
const UNIT: f64 = 9.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    /// Shear angle in radians, positive leans right.
    pub slant: f64,
    /// Pen diameter in pixels.
    pub stroke_width: f64,
    /// Amplitude in pixels of a sinusoidal baseline.
    pub baseline_wobble: f64,
    /// Standard deviation in pixels of per-vertex displacement.
    pub glyph_jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub ink_noise: f64,
}

impl WriterStyle {
    pub const SLANT: (f64, f64) = (-0.4, 0.4);
    pub const STROKE_WIDTH: (f64, f64) = (1.4, 3.0);
    pub const WOBBLE: (f64, f64) = (0.0, 1.5);
    pub const JITTER: (f64, f64) = (0.0, 0.6);
    pub const NOISE: (f64, f64) = (0.0, 0.06);

    pub fn random(rng: &mut impl Rng) -> Self {
        let mut r = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        WriterStyle {
            slant: r(Self::SLANT),
            stroke_width: r(Self::STROKE_WIDTH),
            baseline_wobble: r(Self::WOBBLE),
            glyph_jitter: r(Self::JITTER),
            ink_noise: r(Self::NOISE),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let checks = [
            ("slant", self.slant, Self::SLANT),
            ("stroke_width", self.stroke_width, Self::STROKE_WIDTH),
            ("baseline_wobble", self.baseline_wobble, Self::WOBBLE),
            ("glyph_jitter", self.glyph_jitter, Self::JITTER),
            ("ink_noise", self.ink_noise, Self::NOISE),
        ];
        for (name, v, (lo, hi)) in checks {
            if !(lo..=hi).contains(&v) {
                return Err(DataError::InvalidRange(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// 8-bit quantization, so images survive a PNG round trip unchanged.
pub(crate) fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders `word` in the given style at `RAW_HEIGHT` pixels.
pub fn render_word(word: &str, style: &WriterStyle, rng: &mut impl Rng) -> Result<GrayImage, DataError> {
    style.validate()?;
    if word.is_empty() {
        return Err(DataError::InvalidRange("empty word".into()));
    }
    let jitter = Normal::new(0.0, style.glyph_jitter).expect("valid std");
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let shear = style.slant.tan();
    let margin = 3.0 + 0.7 * UNIT * shear.abs();
    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    let mut pen = margin;
    for c in word.chars() {
        let strokes = glyph(c).ok_or_else(|| DataError::InvalidRange(format!("no glyph for {c:?}")))?;
        for stroke in strokes {
            let pts: Vec<(f64, f64)> = stroke
                .iter()
                .map(|&(gx, gy)| {
                    let x = pen + gx * UNIT + jitter.sample(rng);
                    let mut y = BASELINE - gy * UNIT + style.baseline_wobble * (x / 12.0 + phase).sin();
                    y += jitter.sample(rng);
                    (x + (BASELINE - y) * shear, y)
                })
                .collect();
            segments.extend(pts.windows(2).map(|w| (w[0], w[1])));
        }
        pen += advance(strokes) * UNIT;
    }
    let width = (pen + margin).ceil() as usize;
    let mut img = GrayImage::blank(RAW_HEIGHT, width);
    let radius = style.stroke_width / 2.0;
    let noise = Normal::new(0.0, style.ink_noise).expect("valid std");
    for y in 0..RAW_HEIGHT {
        for x in 0..width {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segments.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            let ink = (radius + 0.5 - d).clamp(0.0, 1.0);
            let mut v = 1.0 - ink;
            if style.ink_noise > 0.0 {
                v += noise.sample(rng);
            }
            img.set(y, x, quantize(v));
        }
    }
    Ok(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train_writers: usize,
    pub val_writers: usize,
    pub test_writers: usize,
    pub words_per_writer: usize,
    pub lexicon: Vec<String>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn n_writers(&self) -> usize {
        self.train_writers + self.val_writers + self.test_writers
    }
}

pub fn default_lexicon() -> Vec<String> {
    "the of and to in is was he for it with as his on be at by had not are but from or have an they which one \
     you were her all she there would their we him been has when who will more no if out so said what up its \
     about into than them can only other new some could time these two may then do first any my now such like \
     our over man me even most made after also did many before must through back years where much your way well"
        .split_whitespace()
        .map(String::from)
        .collect()
}

fn derived_rng(seed: u64, writer: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((writer as u64) << 32) | item as u64);
    rng
}

/// Writers are numbered `w000`, `w001`, ...; the first `train_writers` go to
/// Train, then Val, then Test. Every sample draws from its own RNG stream.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    if cfg.lexicon.is_empty() {
        return Err(DataError::InvalidRange("empty lexicon".into()));
    }
    if cfg.n_writers() == 0 || cfg.words_per_writer == 0 {
        return Err(DataError::InvalidRange("need at least one writer and one word per writer".into()));
    }
    if let Some(w) = cfg.lexicon.iter().find(|w| w.is_empty() || !w.chars().all(|c| c.is_ascii_lowercase())) {
        return Err(DataError::InvalidRange(format!("lexicon word {w:?} is not lowercase a-z")));
    }
    let mut samples = Vec::with_capacity(cfg.n_writers() * cfg.words_per_writer);
    for w in 0..cfg.n_writers() {
        let split = if w < cfg.train_writers {
            Split::Train
        } else if w < cfg.train_writers + cfg.val_writers {
            Split::Val
        } else {
            Split::Test
        };
        let style = WriterStyle::random(&mut derived_rng(cfg.seed, w, u32::MAX as usize));
        for i in 0..cfg.words_per_writer {
            let mut rng = derived_rng(cfg.seed, w, i);
            let word = &cfg.lexicon[rng.random_range(0..cfg.lexicon.len())];
            samples.push(Sample {
                image: render_word(word, &style, &mut rng)?,
                text: word.clone(),
                writer: format!("w{w:03}"),
                split,
            });
        }
    }
    Ok(Dataset { samples })
}
