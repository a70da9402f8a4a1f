use super::grad::gradients;
use super::tape::Tape;
use super::tensor::Tensor;

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the largest relative error over all entries.
///
/// The denominator is `max(|analytic|, |numeric|, 1e-8)`. A non-finite
/// function value or gradient yields `f64::INFINITY`.
pub fn finite_difference_check<F>(f: F, shape: &[usize], x: &[f64], eps: f64) -> f64
where
    F: Fn(&Tensor) -> Tensor,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_difference_check_entries(f, shape, x, eps, &all)
}

/// Like [`finite_difference_check`] but only probes the listed entries.
pub fn finite_difference_check_entries<F>(f: F, shape: &[usize], x: &[f64], eps: f64, entries: &[usize]) -> f64
where
    F: Fn(&Tensor) -> Tensor,
{
    assert!(eps > 0.0 && eps <= 1e-2, "eps must lie in (0, 1e-2]");
    let leaf = Tensor::param(shape.to_vec(), x.to_vec());
    let y = f(&leaf);
    if !y.item().is_finite() {
        return f64::INFINITY;
    }
    let analytic = match gradients(&y, &[leaf], false) {
        Ok(g) => g.at(0).to_vec(),
        Err(_) => return f64::INFINITY,
    };
    let eval = |v: Vec<f64>| Tape::no_grad(|| f(&Tensor::new(shape.to_vec(), v)).item());
    let mut worst: f64 = 0.0;
    for &i in entries {
        let mut plus = x.to_vec();
        plus[i] += eps;
        let mut minus = x.to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return f64::INFINITY;
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
