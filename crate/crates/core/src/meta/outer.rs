use rand_chacha::ChaCha8Rng;

use super::inner::check_variant;
use super::{
    adapt_at_inference, inner_adapt, AdaptedParams, EpisodeData, InstanceWeightNet, LayerLearningRates, MetaConfig,
    MetaError,
};
use crate::autodiff::{gradients, Tensor};
use crate::models::{ForwardCtx, Model};
use crate::optim::{clip_grad_norm, Adam};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Query loss summed over the step's episodes.
    pub loss: f64,
    /// Joint gradient norm before clipping.
    pub grad_norm: f64,
    pub skipped: bool,
}

/// Meta-parameters beyond the model itself, plus the outer optimizer.
#[derive(Clone, Debug)]
pub struct MetaLearner {
    pub config: MetaConfig,
    pub rates: Option<LayerLearningRates>,
    pub weights: Option<InstanceWeightNet>,
    pub optimizer: Adam,
    pub steps_taken: u64,
    pub steps_skipped: u64,
}

impl MetaLearner {
    /// Rates start at `inner_lr`; the instance-weight network is seeded by `seed`.
    pub fn new(model: &Model, config: MetaConfig, seed: u64) -> Result<Self, MetaError> {
        config.validate()?;
        let rates = config.variant.uses_rates().then(|| LayerLearningRates::uniform(model.params.len(), config.inner_lr));
        let weights = config.variant.uses_weights().then(|| {
            let head = model.param(crate::models::HEAD_WEIGHT).shape();
            InstanceWeightNet::new(head[0], head[1], config.iw_hidden, config.iw_proj, seed)
        });
        Self::from_parts(model, config, rates, weights, None)
    }

    pub fn from_parts(
        model: &Model,
        config: MetaConfig,
        rates: Option<LayerLearningRates>,
        weights: Option<InstanceWeightNet>,
        optimizer: Option<Adam>,
    ) -> Result<Self, MetaError> {
        check_variant(&config, rates.as_ref(), weights.as_ref(), model.params.len())?;
        let mut learner =
            MetaLearner { config, rates, weights, optimizer: Adam::new(0.0, &[]), steps_taken: 0, steps_skipped: 0 };
        learner.optimizer = match optimizer {
            Some(o) => o,
            None => Adam::for_tensors(learner.config.outer_lr, &learner.meta_params(model)),
        };
        Ok(learner)
    }

    /// Everything the outer loop updates: model parameters, raw rates, then
    /// the instance-weight network.
    pub fn meta_params(&self, model: &Model) -> Vec<Tensor> {
        let mut all = model.params.clone();
        if let Some(r) = &self.rates {
            all.extend(r.raw.iter().cloned());
        }
        if let Some(w) = &self.weights {
            all.extend(w.params.iter().cloned());
        }
        all
    }

    /// Effective inner rate per parameter tensor.
    pub fn layer_rates(&self, model: &Model) -> Vec<f64> {
        match &self.rates {
            Some(r) => r.values(),
            None => vec![self.config.inner_lr; model.params.len()],
        }
    }

    /// Summed query loss and its gradient w.r.t. [`Self::meta_params`].
    /// Episodes are processed and accumulated in order.
    pub fn meta_gradient(
        &self,
        model: &Model,
        episodes: &[EpisodeData],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Vec<f64>>), MetaError> {
        let wrt = self.meta_params(model);
        let mut total: Vec<Vec<f64>> = wrt.iter().map(|t| vec![0.0; t.numel()]).collect();
        let mut loss_sum = 0.0;
        for ep in episodes {
            let adapted =
                inner_adapt(model, ep, &self.config, self.rates.as_ref(), self.weights.as_ref(), true)?;
            let mut ctx = ForwardCtx::frozen(self.config.outer_dropout.then_some(&mut *rng));
            let query = model.loss(&adapted.params, &ep.query, &mut ctx, None)?;
            loss_sum += query.item();
            let g = gradients(&query, &wrt, false)?;
            for (acc, gi) in total.iter_mut().zip(g.iter()) {
                for (a, x) in acc.iter_mut().zip(gi.data()) {
                    *a += x;
                }
            }
        }
        Ok((loss_sum, total))
    }

    /// One outer update over a set of episodes. A non-finite loss or gradient
    /// skips the update and is reported rather than raised.
    pub fn meta_train_step(
        &mut self,
        model: &mut Model,
        episodes: &[EpisodeData],
        rng: &mut ChaCha8Rng,
    ) -> Result<StepReport, MetaError> {
        let (loss, mut grads) = match self.meta_gradient(model, episodes, rng) {
            Ok(v) => v,
            Err(MetaError::NonFiniteLoss(msg)) => {
                log::warn!("meta step skipped: {msg}");
                self.steps_skipped += 1;
                return Ok(StepReport { loss: f64::NAN, grad_norm: f64::NAN, skipped: true });
            }
            Err(e) => return Err(e),
        };
        let norm = clip_grad_norm(&mut grads, self.config.max_grad_norm);
        if !loss.is_finite() || !norm.is_finite() {
            log::warn!("meta step skipped: loss {loss}, gradient norm {norm}");
            self.steps_skipped += 1;
            return Ok(StepReport { loss, grad_norm: norm, skipped: true });
        }
        let mut values: Vec<Vec<f64>> = self.meta_params(model).iter().map(Tensor::to_vec).collect();
        self.optimizer.step(&mut values, &grads);
        self.write_back(model, values);
        self.steps_taken += 1;
        Ok(StepReport { loss, grad_norm: norm, skipped: false })
    }

    fn write_back(&mut self, model: &mut Model, values: Vec<Vec<f64>>) {
        let mut it = values.into_iter();
        let n = model.params.len();
        let model_vals: Vec<Vec<f64>> = it.by_ref().take(n).collect();
        model.set_values(&model_vals);
        if let Some(r) = &mut self.rates {
            for t in r.raw.iter_mut() {
                *t = Tensor::param(Vec::<usize>::new(), it.next().expect("rate value"));
            }
        }
        if let Some(w) = &mut self.weights {
            for t in w.params.iter_mut() {
                *t = Tensor::param(t.shape().to_vec(), it.next().expect("weight-net value"));
            }
        }
    }

    pub fn adapt(&self, model: &Model, episode: &EpisodeData) -> Result<AdaptedParams, MetaError> {
        adapt_at_inference(model, episode, &self.config, self.rates.as_ref(), self.weights.as_ref())
    }
}
