//! Gather index tables for the linear reshuffling operations, memoized per
//! thread because models reuse the same few shapes.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::ops::strides;
use super::tensor::numel;

#[derive(Clone, PartialEq, Eq, Hash)]
enum Key {
    Narrow(Vec<usize>, usize, usize, usize),
    Permute(Vec<usize>, Vec<usize>),
    Im2col([usize; 4], [usize; 2], usize, usize),
}

thread_local! {
    static CACHE: RefCell<HashMap<Key, Rc<Vec<isize>>>> = RefCell::new(HashMap::new());
}

const CACHE_LIMIT: usize = 512;

fn memo(key: Key, build: impl FnOnce() -> Vec<isize>) -> Rc<Vec<isize>> {
    if let Some(hit) = CACHE.with(|c| c.borrow().get(&key).cloned()) {
        return hit;
    }
    let value = Rc::new(build());
    CACHE.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() >= CACHE_LIMIT {
            c.clear();
        }
        c.insert(key, value.clone());
    });
    value
}

pub(crate) fn narrow(shape: &[usize], axis: usize, start: usize, len: usize) -> Rc<Vec<isize>> {
    memo(Key::Narrow(shape.to_vec(), axis, start, len), || {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut idx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for l in start..start + len {
                let base = (o * full + l) * inner;
                idx.extend((base..base + inner).map(|v| v as isize));
            }
        }
        idx
    })
}

pub(crate) fn permute(shape: &[usize], perm: &[usize]) -> Rc<Vec<isize>> {
    assert_eq!(shape.len(), perm.len(), "permute: rank mismatch");
    memo(Key::Permute(shape.to_vec(), perm.to_vec()), || {
        let src_strides = strides(shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let eff: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let total = numel(shape);
        let mut idx = Vec::with_capacity(total);
        let mut counter = vec![0usize; shape.len()];
        let mut pos = 0usize;
        for _ in 0..total {
            idx.push(pos as isize);
            for ax in (0..out_shape.len()).rev() {
                counter[ax] += 1;
                pos += eff[ax];
                if counter[ax] < out_shape[ax] {
                    break;
                }
                pos -= eff[ax] * counter[ax];
                counter[ax] = 0;
            }
        }
        idx
    })
}

/// Rows are output positions `(n, oy, ox)`, columns are `(c, ky, kx)`;
/// out-of-bounds taps index as -1 (zero padding).
pub(crate) fn im2col(input: [usize; 4], kernel: [usize; 2], stride: usize, pad: usize) -> Rc<Vec<isize>> {
    memo(Key::Im2col(input, kernel, stride, pad), || {
        let [n, c, h, w] = input;
        let [kh, kw] = kernel;
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut idx = Vec::with_capacity(n * oh * ow * c * kh * kw);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let x = (ox * stride + kx) as isize - pad as isize;
                                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                    idx.push(-1);
                                } else {
                                    idx.push((((b * c + ch) * h) as isize + y) * w as isize + x);
                                }
                            }
                        }
                    }
                }
            }
        }
        idx
    })
}
