mod common;

use common::{prepared, small, toy_batch};
use htr_adapt::autodiff::{gradients, Tensor};
use htr_adapt::data::{ImagePipeline, AugmentConfig, Split};
use htr_adapt::meta::*;
use htr_adapt::models::{build_model, Arch, Model};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn episode(model: &Model, n_support: usize, n_query: usize, seed: u64) -> EpisodeData {
    EpisodeData {
        episode: Episode {
            writer: format!("toy{seed}"),
            support: (0..n_support).collect(),
            query: (n_support..n_support + n_query).collect(),
        },
        support: toy_batch(model, n_support, seed),
        query: toy_batch(model, n_query, seed + 1),
    }
}

fn cfg(variant: Variant, inner_lr: f64) -> MetaConfig {
    MetaConfig { variant, inner_lr, outer_dropout: false, iw_hidden: 8, iw_proj: 4, ..MetaConfig::for_arch(Arch::FPHTRLite) }
}

fn plain_pipeline() -> ImagePipeline {
    ImagePipeline::new(AugmentConfig::identity(), false).unwrap()
}

// ---------- episodes ----------

#[test]
fn test_mode_split_sizes() {
    let ds = prepared(0, 1, 40, 3);
    let w = &ds.writers(Split::Test)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ep = sample_episode(&ds, w, 16, EpisodeMode::Test, &mut rng).unwrap();
    assert_eq!((ep.support.len(), ep.query.len()), (16, 24));
    assert!(ep.support.iter().all(|i| !ep.query.contains(i)));
    assert!(ep.support.iter().chain(&ep.query).all(|&i| &ds.samples[i].writer == w));
}

#[test]
fn writer_without_query_rejected() {
    let ds = prepared(0, 1, 16, 3);
    let w = &ds.writers(Split::Test)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        sample_episode(&ds, w, 16, EpisodeMode::Test, &mut rng),
        Err(MetaError::InsufficientSamples { have: 16, need: 17, .. })
    ));
    assert!(matches!(
        sample_episode(&ds, w, 9, EpisodeMode::Train, &mut rng),
        Err(MetaError::InsufficientSamples { have: 16, need: 18, .. })
    ));
}

#[test]
fn train_mode_takes_two_k() {
    let ds = prepared(1, 0, 40, 3);
    let w = &ds.writers(Split::Train)[0];
    let ep = sample_episode(&ds, w, 8, EpisodeMode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!((ep.support.len(), ep.query.len()), (8, 8));
    let same = sample_episode(&ds, w, 8, EpisodeMode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(ep, same);
}

#[test]
fn sampler_draws_distinct_writers() {
    let ds = prepared(6, 0, 8, 5);
    let model = build_model(&htr_adapt::models::ModelConfig::fphtr(), 0).unwrap();
    let mut s = EpisodeSampler::new(&ds, Split::Train, 4, 3, ImagePipeline::default(), 9).unwrap();
    let eps = s.next(&model.config, &ds).unwrap();
    let mut writers: Vec<&str> = eps.iter().map(|e| e.episode.writer.as_str()).collect();
    writers.dedup();
    assert_eq!(writers.len(), 3);
    assert!(eps.iter().all(|e| e.support.len() == 4 && e.query.len() == 4));
    assert!(EpisodeSampler::new(&ds, Split::Train, 4, 7, ImagePipeline::default(), 9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn episodes_are_disjoint_single_writer(k in 1usize..10, extra in 1usize..8, seed in 0u64..1000) {
        let ds = prepared(0, 1, k + extra, seed % 7);
        let w = &ds.writers(Split::Test)[0];
        let ep = sample_episode(&ds, w, k, EpisodeMode::Test, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(ep.support.len(), k);
        prop_assert_eq!(ep.query.len(), extra);
        prop_assert!(ep.support.iter().all(|i| !ep.query.contains(i)));
        prop_assert!(ep.support.iter().chain(&ep.query).all(|&i| &ds.samples[i].writer == w));
    }
}

// ---------- analytic bilevel problem ----------

/// L_in = (theta - a)^2 / 2, one step, L_out = (theta' - b)^2 / 2.
fn analytic(theta: f64, a: f64, b: f64, alpha: f64, graph: InnerGraph) -> (f64, f64) {
    let t = Tensor::param([1], vec![theta]);
    let at = Tensor::new([1], vec![a]);
    let adapted = inner_loop(&[t.clone()], &[Tensor::scalar(alpha)], 1, graph, |p| {
        Ok(p[0].sub(&at).square().sum().scale(0.5))
    })
    .unwrap();
    let out = adapted[0].add_scalar(-b).square().sum().scale(0.5);
    (adapted[0].item(), gradients(&out, &[t], false).unwrap().at(0).item())
}

#[test]
fn analytic_meta_gradient_second_and_first_order() {
    let (_, full) = analytic(0.0, 1.0, 0.0, 0.5, InnerGraph::Full);
    let (_, first) = analytic(0.0, 1.0, 0.0, 0.5, InnerGraph::FirstOrder);
    assert!((full - 0.25).abs() < 1e-10, "{full}");
    assert!((first - 0.5).abs() < 1e-10, "{first}");
}

proptest! {
    #[test]
    fn analytic_battery(theta in -3.0f64..3.0, a in -3.0f64..3.0, b in -3.0f64..3.0, alpha in 0.0f64..1.5) {
        let (adapted, g) = analytic(theta, a, b, alpha, InnerGraph::Full);
        prop_assert!((adapted - (theta - alpha * (theta - a))).abs() < 1e-12);
        let closed = (1.0 - alpha) * ((1.0 - alpha) * theta + alpha * a - b);
        prop_assert!((g - closed).abs() < 1e-8);
        let (_, fo) = analytic(theta, a, b, alpha, InnerGraph::FirstOrder);
        prop_assert!((fo - ((1.0 - alpha) * theta + alpha * a - b)).abs() < 1e-8);
        if alpha != 0.0 && (fo.abs() > 1e-6) {
            prop_assert!((g / fo - (1.0 - alpha)).abs() < 1e-8);
        }
    }
}

// ---------- model-level meta-gradients against finite differences ----------

fn query_loss(model: &Model, ep: &EpisodeData, cfg: &MetaConfig, lrs: Option<&LayerLearningRates>, iw: Option<&InstanceWeightNet>) -> f64 {
    let adapted = inner_adapt(model, ep, cfg, lrs, iw, false).unwrap();
    weighted_support_loss(model, &adapted.params, &ep.query, None).unwrap().item()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[test]
fn meta_gradient_matches_finite_differences() {
    for (arch, variant) in [(Arch::FPHTRLite, Variant::Maml), (Arch::SARLite, Variant::MamlLlr), (Arch::FPHTRLite, Variant::MetaHtr), (Arch::SARLite, Variant::MetaHtr)] {
        let mut model = build_model(&small(arch), 11).unwrap();
        // Zero BN biases put padded pixels exactly on the ReLU kink; move off it.
        let mut jitter = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<Vec<f64>> =
            model.values().into_iter().map(|t| t.into_iter().map(|x| x + jitter.random_range(-0.05..0.05)).collect()).collect();
        model.set_values(&v);
        let ep = episode(&model, 3, 3, 21);
        // A second weighted step would see features of an adapted theta, which
        // carry the same detachment; one step keeps the check exact.
        let steps = if variant == Variant::MetaHtr { 1 } else { 2 };
        let c = MetaConfig { inner_steps: steps, ..cfg(variant, 0.3) };
        let learner = MetaLearner::new(&model, c.clone(), 5).unwrap();
        let (_, grads) = learner.meta_gradient(&model, std::slice::from_ref(&ep), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        // With instance weights the analytic gradient deliberately treats the
        // weight-net inputs as constants in theta; finite differences do not.
        let theta_checks = if variant == Variant::MetaHtr { 0 } else { 6 };
        for _ in 0..theta_checks {
            let ti = rng.random_range(0..model.params.len());
            let ei = rng.random_range(0..model.params[ti].numel());
            let base = model.values();
            let mut eval_at = |delta: f64| {
                let mut v = base.clone();
                v[ti][ei] += delta;
                model.set_values(&v);
                let l = query_loss(&model, &ep, &c, learner.rates.as_ref(), learner.weights.as_ref());
                model.set_values(&base);
                l
            };
            let numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
            worst = worst.max(rel_err(grads[ti][ei], numeric));
        }
        let n = model.params.len();
        if let Some(r) = &learner.rates {
            for ri in [0, n / 2, n - 1] {
                let raw = r.raw_values();
                let at = |delta: f64| {
                    let mut v = raw.clone();
                    v[ri] += delta;
                    query_loss(&model, &ep, &c, Some(&LayerLearningRates::from_raw(&v)), learner.weights.as_ref())
                };
                let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
                worst = worst.max(rel_err(grads[n + ri][0], numeric));
            }
        }
        if let Some(w) = &learner.weights {
            let offset = n + learner.rates.as_ref().map_or(0, |r| r.len());
            for pi in 0..w.params.len() {
                let ei = rng.random_range(0..w.params[pi].numel());
                let at = |delta: f64| {
                    let mut params: Vec<Tensor> = w.params.iter().map(Tensor::detach_param).collect();
                    let mut v = params[pi].to_vec();
                    v[ei] += delta;
                    params[pi] = Tensor::param(params[pi].shape().to_vec(), v);
                    let net = InstanceWeightNet::from_params(w.vocab_size, w.feature_dim, w.hidden, w.proj, w.seed, params);
                    query_loss(&model, &ep, &c, learner.rates.as_ref(), Some(&net))
                };
                let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
                worst = worst.max(rel_err(grads[offset + pi][ei], numeric));
            }
        }
        assert!(worst < 1e-4, "{variant:?}: worst relative error {worst}");
    }
}

#[test]
fn one_episode_step_equals_single_episode_gradient() {
    let model = build_model(&small(Arch::FPHTRLite), 2).unwrap();
    let learner = MetaLearner::new(&model, cfg(Variant::Maml, 0.1), 0).unwrap();
    let ep = episode(&model, 3, 2, 4);
    let (loss, g) = learner.meta_gradient(&model, std::slice::from_ref(&ep), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let adapted = inner_adapt(&model, &ep, &learner.config, None, None, true).unwrap();
    let q = weighted_support_loss(&model, &adapted.params, &ep.query, None).unwrap();
    let direct = gradients(&q, &model.params, false).unwrap();
    assert_eq!(loss, q.item());
    for (a, b) in g.iter().zip(direct.iter()) {
        assert_eq!(a.as_slice(), b.data());
    }
}

#[test]
fn episode_order_does_not_matter() {
    let model = build_model(&small(Arch::SARLite), 2).unwrap();
    let learner = MetaLearner::new(&model, cfg(Variant::MamlLlr, 0.1), 0).unwrap();
    let eps: Vec<EpisodeData> = (0..3).map(|i| episode(&model, 2, 2, 10 + i)).collect();
    let rev: Vec<EpisodeData> = eps.iter().rev().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (l1, g1) = learner.meta_gradient(&model, &eps, &mut rng).unwrap();
    let (l2, g2) = learner.meta_gradient(&model, &rev, &mut rng).unwrap();
    assert!((l1 - l2).abs() <= 1e-9 * l1.abs());
    for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12));
    }
}

// ---------- degenerate equivalences and contracts ----------

#[test]
fn zero_rates_leave_parameters_unchanged() {
    for arch in [Arch::FPHTRLite, Arch::SARLite] {
        let model = build_model(&small(arch), 3).unwrap();
        let ep = episode(&model, 3, 2, 5);
        let zero = LayerLearningRates::from_rates(&vec![0.0; model.params.len()]);
        for create_graph in [false, true] {
            let a = inner_adapt(&model, &ep, &cfg(Variant::MamlLlr, 1e-3), Some(&zero), None, create_graph).unwrap();
            for (x, y) in a.params.iter().zip(&model.params) {
                assert_eq!(x.data(), y.data());
            }
        }
        let a = inner_loop(&model.params, &vec![Tensor::scalar(0.0); model.params.len()], 3, InnerGraph::Full, |p| {
            Ok(weighted_support_loss(&model, p, &ep.support, None)?)
        })
        .unwrap();
        assert_eq!(htr_adapt::models::checksum_tensors(&a), model.checksum());
    }
}

#[test]
fn unit_instance_weights_reduce_to_plain_inner_loss() {
    let model = build_model(&small(Arch::FPHTRLite), 4).unwrap();
    let ep = episode(&model, 4, 2, 6);
    let mut net = InstanceWeightNet::new(model.config.vocab_size(), 8, 8, 4, 1);
    net.params[4] = Tensor::param([1, 8], vec![0.0; 8]);
    net.params[5] = Tensor::param([1], vec![50.0]);
    let (weighted, gamma) = inner_loss(&model, &model.params, &ep.support, Some(&net)).unwrap();
    assert!(gamma.unwrap().data().iter().all(|&g| g == 1.0));
    let (plain, none) = inner_loss(&model, &model.params, &ep.support, None).unwrap();
    assert!(none.is_none());
    assert_eq!(weighted.item(), plain.item());
    let ones = Tensor::ones([ep.support.len(), ep.support.labels[0].len()]);
    assert_eq!(weighted_support_loss(&model, &model.params, &ep.support, Some(&ones)).unwrap().item(), plain.item());
}

#[test]
fn instance_weights_lie_in_unit_interval() {
    let model = build_model(&small(Arch::SARLite), 4).unwrap();
    for seed in 0..5 {
        let ep = episode(&model, 4, 1, seed);
        let mut net = InstanceWeightNet::new(model.config.vocab_size(), 8 + 8, 16, 4, seed);
        for p in net.params.iter_mut() {
            *p = Tensor::param(p.shape().to_vec(), p.data().iter().map(|x| x * 20.0).collect());
        }
        let (_, gamma) = inner_loss(&model, &model.params, &ep.support, Some(&net)).unwrap();
        assert!(gamma.unwrap().data().iter().all(|&g| (0.0..=1.0).contains(&g)));
    }
}

#[test]
fn variant_consistency_enforced() {
    let model = build_model(&small(Arch::FPHTRLite), 0).unwrap();
    let ep = episode(&model, 2, 1, 0);
    let lrs = LayerLearningRates::uniform(model.params.len(), 0.1);
    assert!(matches!(inner_adapt(&model, &ep, &cfg(Variant::Maml, 0.1), Some(&lrs), None, false), Err(MetaError::VariantMismatch(_))));
    assert!(matches!(inner_adapt(&model, &ep, &cfg(Variant::MamlLlr, 0.1), None, None, false), Err(MetaError::VariantMismatch(_))));
    assert!(matches!(inner_adapt(&model, &ep, &cfg(Variant::MetaHtr, 0.1), Some(&lrs), None, false), Err(MetaError::VariantMismatch(_))));
}

#[test]
fn adaptation_never_touches_model_or_statistics() {
    for variant in Variant::all() {
        let mut model = build_model(&small(Arch::FPHTRLite), 7).unwrap();
        // non-trivial running statistics
        let warm = toy_batch(&model, 4, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = htr_adapt::models::ForwardCtx::train(&mut rng);
        model.forward_batch(&model.params.clone(), &warm, &mut ctx).unwrap();
        let updates = std::mem::take(&mut ctx.updates);
        model.apply_bn_updates(&updates);
        let bn = serde_json::to_string(&model.bn_states).unwrap();
        let sum = model.checksum();
        let learner = MetaLearner::new(&model, cfg(variant, 0.2), 1).unwrap();
        for i in 0..3 {
            let ep = episode(&model, 3, 2, i);
            inner_adapt(&model, &ep, &learner.config, learner.rates.as_ref(), learner.weights.as_ref(), true).unwrap();
            learner.adapt(&model, &ep).unwrap();
            finetune_baseline(&model, &ep, 3, 1e-3).unwrap();
        }
        assert_eq!(serde_json::to_string(&model.bn_states).unwrap(), bn);
        assert_eq!(model.checksum(), sum);
    }
}

#[test]
fn inference_adaptation_is_deterministic() {
    let model = build_model(&small(Arch::SARLite), 8).unwrap();
    let learner = MetaLearner::new(&model, cfg(Variant::MetaHtr, 0.05), 2).unwrap();
    let ep = episode(&model, 4, 2, 8);
    let a = learner.adapt(&model, &ep).unwrap();
    let b = learner.adapt(&model, &ep).unwrap();
    assert_eq!(htr_adapt::models::checksum_tensors(&a.params), htr_adapt::models::checksum_tensors(&b.params));
    assert_ne!(htr_adapt::models::checksum_tensors(&a.params), model.checksum());
    assert_eq!(a.provenance.method, "MetaHTR");
}

#[test]
fn finetune_only_moves_output_layer() {
    let model = build_model(&small(Arch::FPHTRLite), 9).unwrap();
    let ep = episode(&model, 4, 1, 9);
    let head_w = model.head_index();
    let head_b = model.index_of("head.bias").unwrap();
    let tuned = finetune_baseline(&model, &ep, 3, 1e-3).unwrap();
    for (i, (a, b)) in tuned.params.iter().zip(&model.params).enumerate() {
        if i == head_w || i == head_b {
            assert_ne!(a.data(), b.data());
        } else {
            assert_eq!(a.data(), b.data(), "{}", model.names()[i]);
        }
    }
    let none = finetune_baseline(&model, &ep, 0, 1e-3).unwrap();
    assert_eq!(htr_adapt::models::checksum_tensors(&none.params), model.checksum());
}

#[test]
fn finetune_support_loss_non_increasing() {
    let model = build_model(&small(Arch::SARLite), 10).unwrap();
    let ep = episode(&model, 4, 1, 10);
    let mut last = f64::INFINITY;
    for steps in 0..=3 {
        let tuned = finetune_baseline(&model, &ep, steps, 1e-3).unwrap();
        let l = weighted_support_loss(&model, &tuned.params, &ep.support, None).unwrap().item();
        assert!(l <= last, "step {steps}: {l} > {last}");
        last = l;
    }
}

#[test]
fn non_finite_step_is_skipped() {
    let mut model = build_model(&small(Arch::FPHTRLite), 1).unwrap();
    let mut learner = MetaLearner::new(&model, cfg(Variant::Maml, 0.1), 0).unwrap();
    let mut v = model.values();
    v[model.head_index()][0] = f64::NAN;
    model.set_values(&v);
    let before = serde_json::to_string(&model.values()).unwrap();
    let ep = episode(&model, 2, 2, 0);
    let r = learner.meta_train_step(&mut model, &[ep], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(r.skipped);
    assert_eq!(learner.steps_skipped, 1);
    assert_eq!(learner.steps_taken, 0);
    assert_eq!(serde_json::to_string(&model.values()).unwrap(), before);
}

#[test]
fn meta_training_reduces_query_loss() {
    let mut model = build_model(&small(Arch::FPHTRLite), 12).unwrap();
    let mut c = cfg(Variant::MamlLlr, 0.05);
    c.outer_lr = 1e-2;
    let mut learner = MetaLearner::new(&model, c, 0).unwrap();
    let eps: Vec<EpisodeData> = (0..2).map(|i| episode(&model, 3, 3, 30 + i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = learner.meta_train_step(&mut model, &eps, &mut rng).unwrap();
    let mut last = first;
    for _ in 0..30 {
        last = learner.meta_train_step(&mut model, &eps, &mut rng).unwrap();
    }
    assert!(!last.skipped && last.loss < 0.5 * first.loss, "{} -> {}", first.loss, last.loss);
    assert!(learner.layer_rates(&model).iter().all(|r| r.is_finite() && *r >= 0.0));
}

#[test]
fn gradient_clipping_caps_joint_norm() {
    let mut model = build_model(&small(Arch::FPHTRLite), 13).unwrap();
    let mut c = cfg(Variant::Maml, 0.1);
    c.max_grad_norm = 1e-6;
    let mut learner = MetaLearner::new(&model, c, 0).unwrap();
    let ep = episode(&model, 2, 2, 1);
    let (_, mut g) = learner.meta_gradient(&model, std::slice::from_ref(&ep), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let raw = htr_adapt::optim::clip_grad_norm(&mut g, 1e-6);
    assert!((htr_adapt::optim::global_norm(&g) - 1e-6).abs() < 1e-15);
    let r = learner.meta_train_step(&mut model, &[ep], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((r.grad_norm - raw).abs() <= 1e-12 * raw);
}

#[test]
fn meta_checkpoint_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("meta.json");
    let mut model = build_model(&small(Arch::SARLite), 14).unwrap();
    let mut learner = MetaLearner::new(&model, cfg(Variant::MetaHtr, 0.05), 3).unwrap();
    let eps: Vec<EpisodeData> = (0..2).map(|i| episode(&model, 2, 2, 40 + i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    learner.meta_train_step(&mut model, &eps, &mut rng).unwrap();
    save_meta(&path, &model, &learner, Some(&rng)).unwrap();
    let (mut model2, mut learner2, rng2) = load_meta(&path).unwrap();
    let mut rng2 = rng2.unwrap();
    assert_eq!(model2.checksum(), model.checksum());
    let a = learner.meta_train_step(&mut model, &eps, &mut rng).unwrap();
    let b = learner2.meta_train_step(&mut model2, &eps, &mut rng2).unwrap();
    assert_eq!(a, b);
    assert_eq!(model.checksum(), model2.checksum());
    assert_eq!(learner.weights.unwrap().params[0].data(), learner2.weights.unwrap().params[0].data());
}

// ---------- protocol ----------

#[test]
fn zero_rate_premise_has_no_effect() {
    let ds = prepared(0, 3, 6, 17);
    let mut mc = htr_adapt::models::ModelConfig::fphtr();
    mc.max_seq_len = 12;
    let model = build_model(&mc, 0).unwrap();
    let c = MetaConfig { variant: Variant::MamlLlr, ..MetaConfig::for_arch(Arch::FPHTRLite) };
    let mut learner = MetaLearner::new(&model, c, 0).unwrap();
    learner.rates = Some(LayerLearningRates::from_rates(&vec![0.0; model.params.len()]));
    let pc = ProtocolConfig { shots: 2, runs: 2, seed: 1, decode_batch: 8 };
    let report = evaluate_adaptation_premise(&model, &ds, Split::Test, &plain_pipeline(), &learner, &pc).unwrap();
    assert_eq!(report.with_adaptation.rows.len() + report.without_adaptation.rows.len(), 2 * 3);
    assert_eq!(report.delta_wer, 0.0);
    assert_eq!(report.test.p, 1.0);
    for (a, b) in report.with_adaptation.rows.iter().zip(&report.without_adaptation.rows) {
        assert_eq!((a.wer, a.cer, a.n_query), (b.wer, b.cer, 4));
        assert_eq!(a.writer, b.writer);
    }
}
