use crate::autodiff::Tensor;

/// Raw value whose softplus is exactly zero in f64.
const ZERO_RAW: f64 = -1e4;

/// One learnable inner-loop rate per model parameter tensor, stored
/// unconstrained and read through softplus so rates stay non-negative.
#[derive(Clone, Debug)]
pub struct LayerLearningRates {
    pub raw: Vec<Tensor>,
}

fn inverse_softplus(y: f64) -> f64 {
    if y <= 0.0 {
        ZERO_RAW
    } else if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl LayerLearningRates {
    pub fn uniform(count: usize, rate: f64) -> Self {
        Self::from_rates(&vec![rate; count])
    }

    pub fn from_rates(rates: &[f64]) -> Self {
        LayerLearningRates { raw: rates.iter().map(|&r| Tensor::param(Vec::<usize>::new(), vec![inverse_softplus(r)])).collect() }
    }

    pub fn from_raw(raw: &[f64]) -> Self {
        LayerLearningRates { raw: raw.iter().map(|&r| Tensor::param(Vec::<usize>::new(), vec![r])).collect() }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Differentiable positive rates, one scalar tensor per parameter.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.raw.iter().map(Tensor::softplus).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.tensors().iter().map(Tensor::item).collect()
    }

    pub fn raw_values(&self) -> Vec<f64> {
        self.raw.iter().map(Tensor::item).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_softplus() {
        let lrs = LayerLearningRates::from_rates(&[1e-4, 1e-3, 0.5, 0.0]);
        let v = lrs.values();
        for (got, want) in v.iter().zip([1e-4, 1e-3, 0.5]) {
            assert!((got - want).abs() < 1e-12 * want.max(1.0));
        }
        assert_eq!(v[3], 0.0);
    }
}
