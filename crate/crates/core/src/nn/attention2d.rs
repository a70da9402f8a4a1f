//! Two-dimensional attention over a feature map, where each position's score
//! also sees its eight neighbours through a bank of per-offset linear maps.

use std::rc::Rc;

use super::NnError;
use crate::autodiff::Tensor;

/// Parameters of the neighbourhood attention.
///
/// `neighbor` is a `[A, C, 3, 3]` bank holding one `A x C` map per relative
/// offset. Its centre tap is never used: the position itself goes through
/// `w_v`, so only the eight surrounding entries contribute.
#[derive(Clone, Debug)]
pub struct Attention2DParams {
    /// `[A, C]`
    pub w_v: Tensor,
    /// `[A, C, 3, 3]`
    pub neighbor: Tensor,
    /// `[A, H_dec]`
    pub w_h: Tensor,
    /// `[A]`
    pub w_e: Tensor,
}

impl Attention2DParams {
    pub fn attn_dim(&self) -> usize {
        self.w_v.shape()[0]
    }
}

/// Position-dependent part of the scores, computed once per feature map.
pub struct Attention2DContext {
    /// `W_v v_ij + sum over neighbours`, `[N, HW, A]`
    keys: Tensor,
    /// Feature vectors, `[N, HW, C]`
    values: Tensor,
    params: Attention2DParams,
    h: usize,
    w: usize,
}

fn center_mask(a: usize, c: usize) -> Tensor {
    let mut m = vec![1.0; a * c * 9];
    for i in 0..a * c {
        m[i * 9 + 4] = 0.0;
    }
    Tensor::new([a, c, 3, 3], m)
}

fn center_index(a: usize, c: usize) -> Rc<Vec<isize>> {
    Rc::new((0..a * c).map(|i| (i * 9 + 4) as isize).collect())
}

impl Attention2DContext {
    /// `features` is the encoder map `[N, C, H, W]`; borders see zero padding.
    pub fn new(features: &Tensor, params: &Attention2DParams) -> Result<Self, NnError> {
        let s = features.shape();
        let a = params.attn_dim();
        if s.len() != 4
            || params.w_v.shape() != [a, s[1]]
            || params.neighbor.shape() != [a, s[1], 3, 3]
            || params.w_e.shape() != [a]
            || params.w_h.ndim() != 2
            || params.w_h.shape()[0] != a
        {
            return Err(NnError::ShapeMismatch(format!(
                "attention_2d: features {s:?}, w_v {:?}, neighbor {:?}, w_h {:?}, w_e {:?}",
                params.w_v.shape(),
                params.neighbor.shape(),
                params.w_h.shape(),
                params.w_e.shape()
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        // One 3x3 convolution: neighbours from the bank, centre tap from w_v.
        let center = params.w_v.reshape(vec![a * c]).scatter_add(center_index(a, c), vec![a, c, 3, 3]);
        let kernel = params.neighbor.mul(&center_mask(a, c)).add(&center);
        let keys = features.conv2d(&kernel, 1, 1).reshape(vec![n, a, h * w]).permute(&[0, 2, 1]);
        let values = features.reshape(vec![n, c, h * w]).permute(&[0, 2, 1]);
        Ok(Attention2DContext { keys, values, params: params.clone(), h, w })
    }

    /// Attends with decoder state `hidden` (`[N, H_dec]`); returns the glimpse
    /// `[N, C]` and weights `[N, H*W]`.
    pub fn step(&self, hidden: &Tensor) -> Result<(Tensor, Tensor), NnError> {
        let n = self.keys.shape()[0];
        let a = self.params.attn_dim();
        if hidden.shape() != [n, self.params.w_h.shape()[1]] {
            return Err(NnError::ShapeMismatch(format!(
                "attention_2d: hidden {:?} vs w_h {:?}",
                hidden.shape(),
                self.params.w_h.shape()
            )));
        }
        let hw = self.h * self.w;
        let query = hidden.matmul_t(&self.params.w_h, false, true).reshape(vec![n, 1, a]);
        let e = self.keys.add(&query).tanh();
        let scores = e.reshape(vec![n * hw, a]).matmul(&self.params.w_e.reshape(vec![a, 1])).reshape(vec![n, hw]);
        let alpha = scores.softmax(1);
        let glimpse = alpha.reshape(vec![n, 1, hw]).matmul(&self.values).reshape(vec![n, self.values.shape()[2]]);
        Ok((glimpse, alpha))
    }

    pub fn map_size(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

/// Single-map form: `v` is `[H, W, D]`, `h_prev` is `[H_dec]`; returns the
/// glimpse `[D]` and weights `[H, W]`.
pub fn attention_2d(v: &Tensor, h_prev: &Tensor, params: &Attention2DParams) -> Result<(Tensor, Tensor), NnError> {
    if v.ndim() != 3 || h_prev.ndim() != 1 {
        return Err(NnError::ShapeMismatch(format!("attention_2d: v {:?}, h {:?}", v.shape(), h_prev.shape())));
    }
    let (h, w, d) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let features = v.permute(&[2, 0, 1]).reshape(vec![1, d, h, w]);
    let ctx = Attention2DContext::new(&features, params)?;
    let (g, alpha) = ctx.step(&h_prev.reshape(vec![1, h_prev.numel()]))?;
    Ok((g.reshape(vec![d]), alpha.reshape(vec![h, w])))
}
