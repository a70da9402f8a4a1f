use super::{AdaptedParams, EpisodeData, InstanceWeightNet, LayerLearningRates, MetaConfig, MetaError, Provenance, Variant};
use crate::autodiff::{gradients, Tape, Tensor};
use crate::models::{Batch, ForwardCtx, Model, HEAD_WEIGHT};
use crate::nn::sequence_cross_entropy_batch;
use crate::optim::Adam;

/// How much of the inner loop's history survives for the outer gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerGraph {
    /// Inner gradients are differentiable: exact second-order meta-gradient.
    Full,
    /// Inner gradients are treated as constants; `theta'` still depends on
    /// `theta` through the identity path.
    FirstOrder,
    /// Plain values; every step yields fresh leaves.
    Detached,
}

/// `steps` gradient steps `theta <- theta - rate_i * grad_i` on `loss`.
pub fn inner_loop<F>(
    theta: &[Tensor],
    rates: &[Tensor],
    steps: usize,
    graph: InnerGraph,
    mut loss: F,
) -> Result<Vec<Tensor>, MetaError>
where
    F: FnMut(&[Tensor]) -> Result<Tensor, MetaError>,
{
    assert_eq!(theta.len(), rates.len(), "one rate per parameter tensor");
    let mut current = theta.to_vec();
    for _ in 0..steps {
        let l = loss(&current)?;
        if !l.item().is_finite() {
            return Err(MetaError::NonFiniteLoss(format!("inner loss {}", l.item())));
        }
        let g = gradients(&l, &current, graph == InnerGraph::Full)?;
        current = match graph {
            InnerGraph::Full | InnerGraph::FirstOrder => {
                current.iter().zip(rates).zip(g.iter()).map(|((p, r), g)| p.sub(&r.mul(g))).collect()
            }
            InnerGraph::Detached => Tape::no_grad(|| {
                current.iter().zip(rates).zip(g.iter()).map(|((p, r), g)| p.sub(&r.mul(g)).detach_param()).collect()
            }),
        };
    }
    Ok(current)
}

/// Support loss with optional per-step weights `[N, L]`, frozen BN and no dropout.
pub fn weighted_support_loss(
    model: &Model,
    params: &[Tensor],
    batch: &Batch,
    weights: Option<&Tensor>,
) -> Result<Tensor, MetaError> {
    Ok(model.loss(params, batch, &mut ForwardCtx::eval(), weights)?)
}

/// The inner-loop objective: plain sequence cross-entropy, or the
/// instance-weighted form when `iw` is given. Returns the weights used.
pub fn inner_loss(
    model: &Model,
    params: &[Tensor],
    batch: &Batch,
    iw: Option<&InstanceWeightNet>,
) -> Result<(Tensor, Option<Tensor>), MetaError> {
    let out = model.forward_batch(params, batch, &mut ForwardCtx::eval())?;
    let gamma = iw.map(|net| net.weights(&out, &batch.labels));
    let loss =
        sequence_cross_entropy_batch(&out.logits, &batch.labels, gamma.as_ref(), model.config.loss.label_smoothing)?;
    Ok((loss, gamma))
}

pub(super) fn check_variant(
    cfg: &MetaConfig,
    lrs: Option<&LayerLearningRates>,
    iw: Option<&InstanceWeightNet>,
    n_params: usize,
) -> Result<(), MetaError> {
    if cfg.variant.uses_rates() != lrs.is_some() {
        return Err(MetaError::VariantMismatch(format!(
            "{} {} per-layer rates",
            cfg.variant.label(),
            if cfg.variant.uses_rates() { "requires" } else { "does not take" }
        )));
    }
    if cfg.variant.uses_weights() != iw.is_some() {
        return Err(MetaError::VariantMismatch(format!(
            "{} {} an instance-weight network",
            cfg.variant.label(),
            if cfg.variant.uses_weights() { "requires" } else { "does not take" }
        )));
    }
    if let Some(l) = lrs {
        if l.len() != n_params {
            return Err(MetaError::VariantMismatch(format!("{} rates for {n_params} parameter tensors", l.len())));
        }
    }
    Ok(())
}

pub(super) fn inner_rates(model: &Model, cfg: &MetaConfig, lrs: Option<&LayerLearningRates>) -> Vec<Tensor> {
    match lrs {
        Some(l) => l.tensors(),
        None => vec![Tensor::scalar(cfg.inner_lr); model.params.len()],
    }
}

/// Adapts the model to an episode's support batch. The model itself is not
/// touched; with `create_graph` the result stays differentiable w.r.t. the
/// model parameters, the rates and the instance-weight network.
pub fn inner_adapt(
    model: &Model,
    episode: &EpisodeData,
    cfg: &MetaConfig,
    lrs: Option<&LayerLearningRates>,
    iw: Option<&InstanceWeightNet>,
    create_graph: bool,
) -> Result<AdaptedParams, MetaError> {
    check_variant(cfg, lrs, iw, model.params.len())?;
    if episode.support.is_empty() {
        return Err(MetaError::InsufficientSamples { writer: episode.episode.writer.clone(), have: 0, need: 1 });
    }
    let rates = inner_rates(model, cfg, lrs);
    let graph = if create_graph { InnerGraph::Full } else { InnerGraph::Detached };
    let params = inner_loop(&model.params, &rates, cfg.inner_steps, graph, |theta| {
        Ok(inner_loss(model, theta, &episode.support, iw)?.0)
    })?;
    Ok(AdaptedParams {
        params,
        provenance: Provenance {
            writer: episode.episode.writer.clone(),
            method: cfg.variant.label().to_string(),
            inner_steps: cfg.inner_steps,
        },
    })
}

/// Test-time adaptation: one detached inner loop in evaluation mode.
pub fn adapt_at_inference(
    model: &Model,
    episode: &EpisodeData,
    cfg: &MetaConfig,
    lrs: Option<&LayerLearningRates>,
    iw: Option<&InstanceWeightNet>,
) -> Result<AdaptedParams, MetaError> {
    inner_adapt(model, episode, cfg, lrs, iw, false)
}

/// Adam on the output layer only, with fresh optimizer state per call.
pub fn finetune_baseline(model: &Model, episode: &EpisodeData, steps: usize, lr: f64) -> Result<AdaptedParams, MetaError> {
    if episode.support.is_empty() {
        return Err(MetaError::InsufficientSamples { writer: episode.episode.writer.clone(), have: 0, need: 1 });
    }
    let w = model.head_index();
    let b = model.index_of("head.bias").expect("every model has head.bias");
    debug_assert_eq!(model.names()[w], HEAD_WEIGHT);
    let mut params = model.params.clone();
    let mut opt = Adam::for_tensors(lr, &[params[w].clone(), params[b].clone()]);
    for _ in 0..steps {
        let loss = weighted_support_loss(model, &params, &episode.support, None)?;
        if !loss.item().is_finite() {
            return Err(MetaError::NonFiniteLoss(format!("fine-tuning loss {}", loss.item())));
        }
        let g = gradients(&loss, &[params[w].clone(), params[b].clone()], false)?;
        let mut head = [params[w].clone(), params[b].clone()];
        opt.step_tensors(&mut head, &[g.at(0).to_vec(), g.at(1).to_vec()]);
        let [hw, hb] = head;
        params[w] = hw;
        params[b] = hb;
    }
    Ok(AdaptedParams {
        params,
        provenance: Provenance { writer: episode.episode.writer.clone(), method: "finetune".into(), inner_steps: steps },
    })
}

impl Variant {
    pub fn all() -> [Variant; 3] {
        [Variant::Maml, Variant::MamlLlr, Variant::MetaHtr]
    }
}
