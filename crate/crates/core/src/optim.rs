//! First-order optimizers over flat parameter values.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_tensors(lr: f64, ts: &[Tensor]) -> Self {
        Self::new(lr, &ts.iter().map(Tensor::numel).collect::<Vec<_>>())
    }

    pub fn step(&mut self, values: &mut [Vec<f64>], grads: &[Vec<f64>]) {
        assert_eq!(values.len(), self.m.len(), "optimizer built for a different parameter list");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((x, g), m), v) in values.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..x.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                x[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }

    /// Updates leaf tensors in place by replacing them with new leaves.
    pub fn step_tensors(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) {
        let mut values: Vec<Vec<f64>> = params.iter().map(Tensor::to_vec).collect();
        self.step(&mut values, grads);
        for (p, v) in params.iter_mut().zip(values) {
            *p = Tensor::param(p.shape().to_vec(), v);
        }
    }
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![vec![30.0, 40.0]];
        assert_eq!(clip_grad_norm(&mut g, 5.0), 50.0);
        assert!((global_norm(&g) - 5.0).abs() < 1e-12);
        let mut small = vec![vec![0.3, 0.4]];
        clip_grad_norm(&mut small, 5.0);
        assert_eq!(small, vec![vec![0.3, 0.4]]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Adam::new(0.01, &[2]);
        let mut x = vec![vec![1.0, -1.0]];
        opt.step(&mut x, &[vec![5.0, -0.2]]);
        assert!((x[0][0] - 0.99).abs() < 1e-9);
        assert!((x[0][1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(0.1, &[1]);
        let mut x = vec![vec![3.0]];
        for _ in 0..500 {
            let g = vec![vec![2.0 * (x[0][0] - 1.0)]];
            opt.step(&mut x, &g);
        }
        assert!((x[0][0] - 1.0).abs() < 1e-3);
    }
}
