use super::NnError;
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosEncKind {
    /// One axis of length `len`.
    Sin1D { len: usize },
    /// A `h x w` grid, rows ordered row-major.
    Sin2D { h: usize, w: usize },
}

fn table(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for p in 0..len {
        for i in 0..d / 2 {
            let rate = 10000f64.powf(-((2 * i) as f64) / d as f64);
            out[p * d + 2 * i] = (p as f64 * rate).sin();
            out[p * d + 2 * i + 1] = (p as f64 * rate).cos();
        }
    }
    out
}

/// `[len, d]` table with `sin` on even and `cos` on odd features.
pub fn sin1d(len: usize, d: usize) -> Result<Tensor, NnError> {
    if d % 2 != 0 {
        return Err(NnError::OddDimension(d));
    }
    Ok(Tensor::new([len, d], table(len, d)))
}

/// `[h * w, d]` table: the first half of each row encodes the row index, the
/// second half the column index.
pub fn sin2d(h: usize, w: usize, d: usize) -> Result<Tensor, NnError> {
    if d % 2 != 0 {
        return Err(NnError::OddDimension(d));
    }
    let half = d / 2;
    if half % 2 != 0 {
        return Err(NnError::OddDimension(half));
    }
    let (ty, tx) = (table(h, half), table(w, half));
    let mut out = Vec::with_capacity(h * w * d);
    for i in 0..h {
        for j in 0..w {
            out.extend_from_slice(&ty[i * half..(i + 1) * half]);
            out.extend_from_slice(&tx[j * half..(j + 1) * half]);
        }
    }
    Ok(Tensor::new([h * w, d], out))
}

pub fn positional_encoding(kind: PosEncKind, d: usize) -> Result<Tensor, NnError> {
    match kind {
        PosEncKind::Sin1D { len } => sin1d(len, d),
        PosEncKind::Sin2D { h, w } => sin2d(h, w, d),
    }
}
