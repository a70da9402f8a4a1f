//! Word-image datasets: synthetic multi-writer generation, manifest loading
//! and training-time augmentation.

mod augment;
mod font;
mod image;
mod manifest;
mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use augment::{augment, prepare, AugmentConfig, ImagePipeline};
pub use image::GrayImage;
pub use manifest::{load_corpus, write_manifest};
pub use synth::{default_lexicon, generate_synthetic_dataset, render_word, SynthConfig, WriterStyle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: GrayImage,
    pub text: String,
    pub writer: String,
    pub split: Split,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("manifest line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },
    #[error("writer {writer} appears in both {a:?} and {b:?}")]
    SplitLeakage { writer: String, a: Split, b: Split },
    #[error("image {path}: {msg}")]
    Image { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writers of a split in order of first appearance.
    pub fn writers(&self, split: Split) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in self.samples.iter().filter(|s| s.split == split) {
            if !out.contains(&s.writer) {
                out.push(s.writer.clone());
            }
        }
        out
    }

    /// Indices of a writer's samples, in dataset order.
    pub fn indices_of(&self, writer: &str) -> Vec<usize> {
        self.samples.iter().enumerate().filter(|(_, s)| s.writer == writer).map(|(i, _)| i).collect()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Fails if any writer has samples in more than one split.
    pub fn validate_disjoint(&self) -> Result<(), DataError> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for s in &self.samples {
            match seen.get(s.writer.as_str()) {
                Some(&other) if other != s.split => {
                    let (a, b) = if other < s.split { (other, s.split) } else { (s.split, other) };
                    return Err(DataError::SplitLeakage { writer: s.writer.clone(), a, b });
                }
                Some(_) => {}
                None => {
                    seen.insert(&s.writer, s.split);
                }
            }
        }
        Ok(())
    }

    /// Applies an image transform to every sample; splits are untouched and
    /// re-validated.
    pub fn map_images(&self, f: impl Fn(&GrayImage) -> GrayImage) -> Result<Dataset, DataError> {
        let out = Dataset {
            samples: self.samples.iter().map(|s| Sample { image: f(&s.image), ..s.clone() }).collect(),
        };
        out.validate_disjoint()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(writer: &str, split: Split) -> Sample {
        Sample { image: GrayImage::blank(2, 2), text: "a".into(), writer: writer.into(), split }
    }

    #[test]
    fn leakage_detected() {
        let ds = Dataset { samples: vec![sample("w1", Split::Train), sample("w2", Split::Test), sample("w1", Split::Test)] };
        match ds.validate_disjoint() {
            Err(DataError::SplitLeakage { writer, a, b }) => {
                assert_eq!(writer, "w1");
                assert_eq!((a, b), (Split::Train, Split::Test));
            }
            other => panic!("expected leakage, got {other:?}"),
        }
    }

    #[test]
    fn writer_listing_keeps_order() {
        let ds = Dataset {
            samples: vec![sample("b", Split::Train), sample("a", Split::Train), sample("b", Split::Train)],
        };
        assert_eq!(ds.writers(Split::Train), vec!["b", "a"]);
        assert_eq!(ds.indices_of("b"), vec![0, 2]);
        assert!(ds.writers(Split::Test).is_empty());
    }
}
