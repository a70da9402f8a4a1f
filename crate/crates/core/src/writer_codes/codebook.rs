use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{build_style_clusters, hinge_histogram, CodeAdapter, CodeKind, WriterCode, WriterCodeError, INIT_SIGMA};
use crate::data::{Dataset, GrayImage, Split};
use crate::models::{Model, NamedTensor};

pub const CODEBOOK_VERSION: u32 = 1;

/// Codes of one kind plus the adapter that consumes them.
#[derive(Clone, Debug)]
pub struct Codebook {
    pub kind: CodeKind,
    pub dim: usize,
    /// Learned and Hinge: one per training writer. Style: one per cluster.
    /// Zero: a single all-zero code.
    pub codes: Vec<WriterCode>,
    pub writer_index: BTreeMap<String, usize>,
    /// Style only.
    pub centroids: Vec<Vec<f64>>,
    pub adapter: CodeAdapter,
}

/// Mean Hinge histogram over the images that carry enough ink.
pub fn mean_hinge(images: &[&GrayImage]) -> Result<Vec<f64>, WriterCodeError> {
    let mut sum = vec![0.0; super::HINGE_DIM];
    let mut used = 0usize;
    let mut last_err = None;
    for im in images {
        match hinge_histogram(im) {
            Ok(h) => {
                for (s, v) in sum.iter_mut().zip(&h.values) {
                    *s += v;
                }
                used += 1;
            }
            Err(e @ WriterCodeError::InsufficientInk { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(last_err.unwrap_or(WriterCodeError::InsufficientInk { found: 0, needed: super::MIN_CONTOUR_PIXELS }));
    }
    Ok(sum.into_iter().map(|s| s / used as f64).collect())
}

fn bn_channels(model: &Model) -> Vec<usize> {
    model.bn_states.iter().map(|s| s.channels()).collect()
}

impl Codebook {
    /// Sets up codes for the writers of `split`. Hinge statistics are taken
    /// from the raw images of `dataset`. `k` is the number of style clusters.
    pub fn build(
        kind: CodeKind,
        model: &Model,
        dataset: &Dataset,
        split: Split,
        hidden: usize,
        k: usize,
        seed: u64,
    ) -> Result<Self, WriterCodeError> {
        let dim = kind.default_dim();
        let writers = dataset.writers(split);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hinge_of = |w: &str| {
            let images: Vec<&GrayImage> = dataset.indices_of(w).iter().map(|&i| &dataset.samples[i].image).collect();
            mean_hinge(&images)
        };
        let mut writer_index = BTreeMap::new();
        let mut centroids = Vec::new();
        let codes = match kind {
            CodeKind::Zero => {
                for w in &writers {
                    writer_index.insert(w.clone(), 0);
                }
                vec![WriterCode::zero(dim)]
            }
            CodeKind::Learned => {
                let normal = Normal::new(0.0, INIT_SIGMA).expect("finite sigma");
                writers
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        writer_index.insert(w.clone(), i);
                        WriterCode { kind, id: w.clone(), values: (0..dim).map(|_| normal.sample(&mut rng)).collect() }
                    })
                    .collect()
            }
            CodeKind::Hinge => writers
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    writer_index.insert(w.clone(), i);
                    Ok(WriterCode { kind, id: w.clone(), values: hinge_of(w)? })
                })
                .collect::<Result<Vec<_>, WriterCodeError>>()?,
            CodeKind::Style => {
                let hinges: Vec<Vec<f64>> = writers.iter().map(|w| hinge_of(w)).collect::<Result<_, _>>()?;
                let clusters = build_style_clusters(&hinges, k, dim, &mut rng)?;
                for (w, h) in writers.iter().zip(&hinges) {
                    writer_index.insert(w.clone(), clusters.assign(h));
                }
                centroids = clusters.centroids;
                clusters.codes
            }
        };
        let adapter = CodeAdapter::new(dim, &bn_channels(model), hidden, seed.wrapping_add(1));
        Ok(Codebook { kind, dim, codes, writer_index, centroids, adapter })
    }

    /// Index of the code used for a training writer.
    pub fn code_index(&self, writer: &str) -> Result<usize, WriterCodeError> {
        if self.kind == CodeKind::Zero {
            return Ok(0);
        }
        self.writer_index.get(writer).copied().ok_or_else(|| WriterCodeError::UnknownWriter(writer.to_string()))
    }

    /// The code for a (possibly unseen) writer. Hinge and style codes are
    /// derived from `support` images; learned codes are looked up, and an
    /// unseen writer needs [`super::init_new_writer_code`] instead.
    pub fn assign(&self, writer: &str, support: &[&GrayImage]) -> Result<WriterCode, WriterCodeError> {
        match self.kind {
            CodeKind::Zero => Ok(WriterCode::zero(self.dim)),
            CodeKind::Learned => Ok(self.codes[self.code_index(writer)?].clone()),
            CodeKind::Hinge => {
                if support.is_empty() {
                    return Ok(self.codes[self.code_index(writer)?].clone());
                }
                Ok(WriterCode { kind: CodeKind::Hinge, id: writer.to_string(), values: mean_hinge(support)? })
            }
            CodeKind::Style => {
                let cluster = if support.is_empty() {
                    self.code_index(writer)?
                } else {
                    super::kmeans::nearest(&self.centroids, &mean_hinge(support)?)
                };
                Ok(self.codes[cluster].clone())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    version: u32,
    kind: CodeKind,
    dim: usize,
    codes: Vec<WriterCode>,
    writer_index: BTreeMap<String, usize>,
    centroids: Vec<Vec<f64>>,
    adapter_hidden: usize,
    adapter_channels: Vec<usize>,
    adapter: Vec<NamedTensor>,
}

pub fn save_codebook(book: &Codebook, path: &Path) -> Result<(), WriterCodeError> {
    let names = book.adapter.names();
    let file = CodebookFile {
        version: CODEBOOK_VERSION,
        kind: book.kind,
        dim: book.dim,
        codes: book.codes.clone(),
        writer_index: book.writer_index.clone(),
        centroids: book.centroids.clone(),
        adapter_hidden: book.adapter.hidden,
        adapter_channels: book.adapter.channels.clone(),
        adapter: names.iter().zip(&book.adapter.params).map(|(n, t)| NamedTensor::from_tensor(n, t)).collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| WriterCodeError::Codebook(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_codebook(path: &Path) -> Result<Codebook, WriterCodeError> {
    let text = std::fs::read_to_string(path)?;
    let f: CodebookFile = serde_json::from_str(&text).map_err(|e| WriterCodeError::Codebook(e.to_string()))?;
    if f.version != CODEBOOK_VERSION {
        return Err(WriterCodeError::Codebook(format!("unsupported version {}", f.version)));
    }
    let mut adapter = CodeAdapter::new(f.dim, &f.adapter_channels, f.adapter_hidden, 0);
    let names = adapter.names();
    if names.len() != f.adapter.len() {
        return Err(WriterCodeError::Codebook("adapter tensor count mismatch".into()));
    }
    for ((slot, name), nt) in adapter.params.iter_mut().zip(&names).zip(&f.adapter) {
        if &nt.name != name || nt.shape != slot.shape() {
            return Err(WriterCodeError::Codebook(format!("adapter tensor {} does not match {name}", nt.name)));
        }
        *slot = nt.to_param();
    }
    if f.codes.iter().any(|c| c.values.len() != f.dim) {
        return Err(WriterCodeError::Codebook("code length differs from dim".into()));
    }
    Ok(Codebook {
        kind: f.kind,
        dim: f.dim,
        codes: f.codes,
        writer_index: f.writer_index,
        centroids: f.centroids,
        adapter,
    })
}
