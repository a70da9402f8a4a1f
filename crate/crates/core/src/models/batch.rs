use super::ModelError;
use crate::autodiff::Tensor;
use crate::data::GrayImage;
use crate::nn::{Vocab, PAD};

/// Images stacked as `[N, 1, H, W]` with ink = 1 and white padding = 0, plus
/// teacher-forcing inputs and the shifted labels (both PAD-filled).
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub inputs: Vec<Vec<usize>>,
    pub labels: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Stacks equally tall images, right-padding to a common width that is a
/// multiple of four.
pub fn stack_images(images: &[&GrayImage]) -> Result<Tensor, ModelError> {
    let first = images.first().ok_or(ModelError::EmptyBatch)?;
    let h = first.height;
    if let Some(bad) = images.iter().find(|im| im.height != h) {
        return Err(ModelError::InvalidConfig(format!("image heights differ: {h} vs {}", bad.height)));
    }
    let w = images.iter().map(|im| im.width).max().unwrap_or(1).max(4).div_ceil(4) * 4;
    let mut data = vec![0.0; images.len() * h * w];
    for (n, im) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..im.width {
                data[(n * h + y) * w + x] = 1.0 - im.get(y, x);
            }
        }
    }
    Ok(Tensor::new([images.len(), 1, h, w], data))
}

pub fn make_batch(images: &[&GrayImage], texts: &[&str], vocab: &Vocab, max_len: usize) -> Result<Batch, ModelError> {
    if images.len() != texts.len() {
        return Err(ModelError::InvalidConfig(format!("{} images for {} texts", images.len(), texts.len())));
    }
    let tensor = stack_images(images)?;
    let mut seqs = Vec::with_capacity(texts.len());
    for t in texts {
        let ids = vocab.encode(t).map_err(ModelError::UnknownCharacter)?;
        if ids.len() - 1 > max_len {
            return Err(ModelError::SequenceTooLong { len: ids.len() - 1, max: max_len });
        }
        seqs.push(ids);
    }
    let l = seqs.iter().map(|s| s.len() - 1).max().unwrap_or(1);
    let pad = |s: &[usize]| {
        let mut v = s.to_vec();
        v.resize(l, PAD);
        v
    };
    Ok(Batch {
        images: tensor,
        inputs: seqs.iter().map(|s| pad(&s[..s.len() - 1])).collect(),
        labels: seqs.iter().map(|s| pad(&s[1..])).collect(),
    })
}
