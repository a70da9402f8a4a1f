use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::NnError;
use crate::autodiff::Tensor;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;

/// Character set with three reserved ids in front.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab { chars: ('a'..='z').collect() }
    }
}

impl Vocab {
    /// Builds a vocabulary from distinct lowercase characters, keeping order.
    pub fn new(chars: &str) -> Result<Self, String> {
        let mut out: Vec<char> = Vec::new();
        for c in chars.chars() {
            if c.is_uppercase() {
                return Err(format!("vocabulary must be lowercase, found {c:?}"));
            }
            if out.contains(&c) {
                return Err(format!("duplicate vocabulary character {c:?}"));
            }
            out.push(c);
        }
        if out.is_empty() {
            return Err("empty vocabulary".into());
        }
        Ok(Vocab { chars: out })
    }

    pub fn chars(&self) -> String {
        self.chars.iter().collect()
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.chars.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 3)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(3).and_then(|i| self.chars.get(i).copied())
    }

    /// `SOS, ids.., EOS`; unknown characters are an error.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, char> {
        let mut ids = vec![SOS];
        for c in text.chars() {
            ids.push(self.id(c).ok_or(c)?);
        }
        ids.push(EOS);
        Ok(ids)
    }

    /// Drops reserved ids and stops at the first EOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().take_while(|&&i| i != EOS).filter_map(|&i| self.char_of(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub vocab: Vocab,
    pub label_smoothing: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec { vocab: Vocab::default(), label_smoothing: 0.0 }
    }
}

fn check_ids(targets: &[usize], vocab: usize) -> Result<(), NnError> {
    match targets.iter().find(|&&t| t >= vocab) {
        Some(&id) => Err(NnError::IndexOutOfVocab { id, vocab }),
        None => Ok(()),
    }
}

/// Per-position negative log-likelihood of `targets` under `logits`
/// `[.., V]`; result has the shape of `logits` without the last axis.
/// With smoothing `s` the target distribution is `(1 - s) onehot + s / V`.
pub fn token_nll(logits: &Tensor, targets: &[usize], smoothing: f64) -> Result<Tensor, NnError> {
    let s = logits.shape();
    let v = *s.last().unwrap_or(&0);
    let rows = logits.numel() / v.max(1);
    if s.len() < 2 || targets.len() != rows {
        return Err(NnError::ShapeMismatch(format!("token_nll: logits {s:?}, {} targets", targets.len())));
    }
    check_ids(targets, v)?;
    let logp = logits.flatten_rows().log_softmax(1);
    let index: Vec<isize> = targets.iter().enumerate().map(|(r, &t)| (r * v + t) as isize).collect();
    let mut nll = logp.gather(Rc::new(index), vec![rows]).neg();
    if smoothing > 0.0 {
        let uniform = logp.mean_axis(1, false).neg();
        nll = nll.scale(1.0 - smoothing).add(&uniform.scale(smoothing));
    }
    Ok(nll.reshape(s[..s.len() - 1].to_vec()))
}

/// `-(1/L') sum_t w_t log p(y_t)` over the non-PAD steps of one sequence.
pub fn sequence_cross_entropy(logits: &Tensor, target: &[usize], weights: Option<&Tensor>) -> Result<Tensor, NnError> {
    if logits.ndim() != 2 {
        return Err(NnError::ShapeMismatch(format!("sequence_cross_entropy: logits {:?}", logits.shape())));
    }
    let (l, v) = (logits.shape()[0], logits.shape()[1]);
    let w = weights.map(|w| w.reshape(vec![1, l]));
    if let Some(wt) = weights {
        if wt.numel() != l {
            return Err(NnError::ShapeMismatch(format!("weights {:?} for {l} steps", wt.shape())));
        }
    }
    sequence_cross_entropy_batch(&logits.reshape(vec![1, l, v]), &[target.to_vec()], w.as_ref(), 0.0)
}

/// Batch mean of the per-sequence loss. `logits` is `[N, L, V]`, each target
/// has length `L` (PAD-filled), `weights` is `[N, L]`.
pub fn sequence_cross_entropy_batch(
    logits: &Tensor,
    targets: &[Vec<usize>],
    weights: Option<&Tensor>,
    smoothing: f64,
) -> Result<Tensor, NnError> {
    let s = logits.shape();
    if s.len() != 3 || targets.len() != s[0] || targets.iter().any(|t| t.len() != s[1]) {
        return Err(NnError::ShapeMismatch(format!(
            "sequence_cross_entropy: logits {s:?}, target lengths {:?}",
            targets.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    let (n, l) = (s[0], s[1]);
    if let Some(w) = weights {
        if w.shape() != [n, l] {
            return Err(NnError::ShapeMismatch(format!("weights {:?}, expected [{n}, {l}]", w.shape())));
        }
    }
    let flat: Vec<usize> = targets.iter().flatten().copied().collect();
    let nll = token_nll(logits, &flat, smoothing)?;
    let mut mask = vec![0.0; n * l];
    for (i, t) in targets.iter().enumerate() {
        let count = t.iter().filter(|&&id| id != PAD).count();
        for (j, &id) in t.iter().enumerate() {
            if id != PAD {
                mask[i * l + j] = 1.0 / (count as f64 * n as f64);
            }
        }
    }
    let mut terms = nll.mul(&Tensor::new([n, l], mask));
    if let Some(w) = weights {
        terms = terms.mul(w);
    }
    Ok(terms.sum())
}
