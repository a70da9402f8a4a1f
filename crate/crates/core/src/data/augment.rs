use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, GrayImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Integer downscale applied first (2 halves the resolution).
    pub downscale: usize,
    /// Wider images are squeezed horizontally to this width after downscaling.
    pub max_width: usize,
    /// Rotation drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub scale: (f64, f64),
    /// Additive brightness shift drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Contrast factor around mid-gray.
    pub contrast: (f64, f64),
    /// Noise standard deviation drawn from `[0, noise_sigma]`.
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            downscale: 2,
            max_width: 64,
            rotation_deg: 5.0,
            scale: (0.9, 1.1),
            brightness: 0.2,
            contrast: (0.8, 1.2),
            noise_sigma: 0.05,
        }
    }
}

impl AugmentConfig {
    /// Downscaling only.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            scale: (1.0, 1.0),
            brightness: 0.0,
            contrast: (1.0, 1.0),
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::InvalidRange(m));
        if self.downscale == 0 || self.max_width == 0 {
            return err("downscale and max_width must be positive".into());
        }
        if !(0.0..=45.0).contains(&self.rotation_deg) {
            return err(format!("rotation_deg {} outside [0, 45]", self.rotation_deg));
        }
        if !(self.scale.0 > 0.0 && self.scale.0 <= self.scale.1) {
            return err(format!("scale range {:?} invalid", self.scale));
        }
        if !(0.0..1.0).contains(&self.brightness) {
            return err(format!("brightness {} outside [0, 1)", self.brightness));
        }
        if !(self.contrast.0 > 0.0 && self.contrast.0 <= self.contrast.1) {
            return err(format!("contrast range {:?} invalid", self.contrast));
        }
        if !(0.0..=1.0).contains(&self.noise_sigma) {
            return err(format!("noise_sigma {} outside [0, 1]", self.noise_sigma));
        }
        Ok(())
    }
}

fn squeeze(img: &GrayImage, width: usize) -> GrayImage {
    let ratio = img.width as f64 / width as f64;
    let mut out = GrayImage::blank(img.height, width);
    for y in 0..img.height {
        for x in 0..width {
            let sx = (x as f64 + 0.5) * ratio - 0.5;
            out.set(y, x, img.sample(y as f64, sx.max(0.0)));
        }
    }
    out
}

/// Deterministic part of the pipeline: downscale, then cap the width.
pub fn prepare(image: &GrayImage, cfg: &AugmentConfig) -> GrayImage {
    let small = image.downscale(cfg.downscale);
    if small.width > cfg.max_width {
        squeeze(&small, cfg.max_width)
    } else {
        small
    }
}

/// `prepare`, then random rotation and scaling about the centre, brightness,
/// contrast and Gaussian noise. The canvas size is kept.
pub fn augment(image: &GrayImage, rng: &mut impl Rng, cfg: &AugmentConfig) -> Result<GrayImage, DataError> {
    cfg.validate()?;
    let mut img = prepare(image, cfg);
    let angle = rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg).to_radians();
    let scale = rng.random_range(cfg.scale.0..=cfg.scale.1);
    let shift = rng.random_range(-cfg.brightness..=cfg.brightness);
    let contrast = rng.random_range(cfg.contrast.0..=cfg.contrast.1);
    let sigma = rng.random_range(0.0..=cfg.noise_sigma);
    if angle != 0.0 || scale != 1.0 {
        let (cy, cx) = ((img.height as f64 - 1.0) / 2.0, (img.width as f64 - 1.0) / 2.0);
        let (sin, cos) = angle.sin_cos();
        let mut out = GrayImage::blank(img.height, img.width);
        for y in 0..img.height {
            for x in 0..img.width {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sx = (cos * dx + sin * dy) / scale + cx;
                let sy = (-sin * dx + cos * dy) / scale + cy;
                out.set(y, x, img.sample(sy, sx));
            }
        }
        img = out;
    }
    if shift != 0.0 || contrast != 1.0 || sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("valid std");
        for v in &mut img.pixels {
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            *v = ((*v - 0.5) * contrast + 0.5 + shift + n).clamp(0.0, 1.0);
        }
    }
    Ok(img)
}


/// How images reach the model: training images may be augmented, all others
/// only go through [`prepare`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePipeline {
    pub config: AugmentConfig,
    pub augment_training: bool,
}

impl ImagePipeline {
    pub fn new(config: AugmentConfig, augment_training: bool) -> Result<Self, DataError> {
        config.validate()?;
        Ok(ImagePipeline { config, augment_training })
    }

    pub fn eval_image(&self, raw: &GrayImage) -> GrayImage {
        prepare(raw, &self.config)
    }

    pub fn train_image(&self, raw: &GrayImage, rng: &mut impl Rng) -> GrayImage {
        if self.augment_training {
            augment(raw, rng, &self.config).expect("validated at construction")
        } else {
            prepare(raw, &self.config)
        }
    }
}

impl Default for ImagePipeline {
    fn default() -> Self {
        ImagePipeline { config: AugmentConfig::default(), augment_training: true }
    }
}
