use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CodeKind, WriterCode, WriterCodeError, INIT_SIGMA};

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;
pub const MAX_RESTARTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn plus_plus_seed(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().expect("just pushed")));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds. A run that ends with an empty
/// cluster is reseeded, up to [`MAX_RESTARTS`] times.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Result<KMeansResult, WriterCodeError> {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    if k == 0 || distinct.len() < k {
        return Err(WriterCodeError::InvalidInput(format!("{} distinct points for k = {k}", distinct.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(WriterCodeError::ShapeMismatch("points differ in dimension".into()));
    }
    for _ in 0..=MAX_RESTARTS {
        let mut centroids = plus_plus_seed(points, k, rng);
        let mut assignment = vec![0; points.len()];
        let mut sse_history = Vec::new();
        for _ in 0..MAX_ITERATIONS {
            for (a, p) in assignment.iter_mut().zip(points) {
                *a = nearest(&centroids, p);
            }
            sse_history.push(points.iter().zip(&assignment).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(&assignment) {
                counts[a] += 1;
                for (s, x) in sums[a].iter_mut().zip(p) {
                    *s += x;
                }
            }
            let mut shift: f64 = 0.0;
            for c in 0..k {
                if counts[c] == 0 {
                    continue;
                }
                let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
                centroids[c] = next;
            }
            if shift < TOLERANCE {
                break;
            }
        }
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(&centroids, p);
        }
        if (0..k).all(|c| assignment.contains(&c)) {
            return Ok(KMeansResult { centroids, assignment, sse_history });
        }
    }
    Err(WriterCodeError::DegenerateClustering { restarts: MAX_RESTARTS })
}

/// Centroids in Hinge space, each owning a learnable code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleClusters {
    pub centroids: Vec<Vec<f64>>,
    pub codes: Vec<WriterCode>,
}

impl StyleClusters {
    pub fn assign(&self, hinge: &[f64]) -> usize {
        nearest(&self.centroids, hinge)
    }
}

/// Clusters per-writer Hinge codes. Each cluster gets a small random code
/// that is learned afterwards.
pub fn build_style_clusters(
    hinge_codes: &[Vec<f64>],
    k: usize,
    code_dim: usize,
    rng: &mut impl Rng,
) -> Result<StyleClusters, WriterCodeError> {
    let km = kmeans(hinge_codes, k, rng)?;
    let normal = Normal::new(0.0, INIT_SIGMA).expect("finite sigma");
    let codes = (0..k)
        .map(|i| WriterCode {
            kind: CodeKind::Style,
            id: format!("cluster{i}"),
            values: (0..code_dim).map(|_| normal.sample(rng)).collect(),
        })
        .collect();
    Ok(StyleClusters { centroids: km.centroids, codes })
}
