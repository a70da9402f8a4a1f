//! Central-difference oracles for every differentiable primitive and the
//! composed layers built from them. Each check weights the output by a fixed
//! random tensor so every output entry contributes, then compares the
//! gradient with respect to each input in turn.

use std::rc::Rc;

use htr_adapt::autodiff::{apply_primitive, finite_difference_check, gradients, Primitive, Tape, Tensor};
use htr_adapt::nn::{
    attention_2d, batch_norm_with_mode, layer_norm, linear, lstm_cell, sequence_cross_entropy, Attention2DParams,
    AttentionParams, BatchNormState, DecoderBlockParams, LstmWeights, StatsMode, multi_head_attention,
    transformer_decoder_block,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step for single primitives.
pub const EPS: f64 = 1e-5;
/// Step for composed layers. Their deeper graphs carry more roundoff in each
/// evaluation, which a step of 1e-5 amplifies past 1e-4 relative on entries
/// with gradients near 1e-7.
pub const LAYER_EPS: f64 = 1e-4;

type Inputs = Vec<(Vec<usize>, Vec<f64>)>;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values with random signs and magnitude in `[lo, hi)`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> (Vec<usize>, Vec<f64>) {
    let (s, v) = uniform(rng, shape, lo, hi);
    (s, v.into_iter().map(|x| if rng.random_bool(0.5) { x } else { -x }).collect())
}

/// Distinct values spaced 0.1 apart in random order, so no max is ever tied.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.05 * n as f64).collect();
    v.shuffle(rng);
    (shape.to_vec(), v)
}

/// Absolute bound for inputs whose true gradient is exactly zero, where a
/// relative error only measures roundoff.
pub const ZERO_GRAD_BOUND: f64 = 1e-9;

/// Largest relative error over all inputs of `f`. Inputs listed in `zeros`
/// are instead required to have analytic and numeric gradients below
/// [`ZERO_GRAD_BOUND`]; a violation reports infinity.
pub fn worst_error(inputs: &Inputs, f: &dyn Fn(&[Tensor]) -> Tensor, zeros: &[usize], eps: f64, rng: &mut ChaCha8Rng) -> f64 {
    let base: Vec<Tensor> = inputs.iter().map(|(s, v)| Tensor::new(s.clone(), v.clone())).collect();
    let out = Tape::no_grad(|| f(&base));
    let r = Tensor::new(out.shape().to_vec(), (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut worst: f64 = 0.0;
    for (i, (shape, values)) in inputs.iter().enumerate() {
        let g = |x: &Tensor| {
            let mut ts = base.clone();
            ts[i] = x.clone();
            f(&ts).mul(&r).sum()
        };
        if zeros.contains(&i) {
            if max_abs_gradient(&g, shape, values, eps) >= ZERO_GRAD_BOUND {
                return f64::INFINITY;
            }
        } else {
            worst = worst.max(finite_difference_check(g, shape, values, eps));
        }
    }
    worst
}

fn max_abs_gradient(g: &dyn Fn(&Tensor) -> Tensor, shape: &[usize], values: &[f64], eps: f64) -> f64 {
    let leaf = Tensor::param(shape.to_vec(), values.to_vec());
    let analytic = gradients(&g(&leaf), &[leaf.clone()], false).unwrap().at(0).to_vec();
    let mut worst = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..values.len() {
        let mut x = values.to_vec();
        x[j] += eps;
        let plus = Tape::no_grad(|| g(&Tensor::new(shape.to_vec(), x.clone())).item());
        x[j] -= 2.0 * eps;
        let minus = Tape::no_grad(|| g(&Tensor::new(shape.to_vec(), x)).item());
        worst = worst.max(((plus - minus) / (2.0 * eps)).abs());
    }
    worst
}

pub struct Case {
    pub name: &'static str,
    pub make: fn(&mut ChaCha8Rng) -> (Inputs, Box<dyn Fn(&[Tensor]) -> Tensor>),
}

impl Case {
    /// Inputs whose gradient is identically zero. A key bias adds the same
    /// constant to every score in a softmax row, so it never moves the output.
    pub fn zero_gradient_inputs(&self) -> &'static [usize] {
        match self.name {
            "transformer_decoder_block" => &[5, 13],
            _ => &[],
        }
    }
}

fn prim(p: Primitive) -> Box<dyn Fn(&[Tensor]) -> Tensor> {
    Box::new(move |ts: &[Tensor]| apply_primitive(&p, ts).expect("valid primitive inputs"))
}

pub fn primitive_cases() -> Vec<Case> {
    vec![
        Case { name: "add (broadcast)", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)], prim(Primitive::Add)) },
        Case { name: "sub (broadcast)", make: |r| (vec![uniform(r, &[2, 1, 3], -1.0, 1.0), uniform(r, &[4, 3], -1.0, 1.0)], prim(Primitive::Sub)) },
        Case { name: "mul (broadcast)", make: |r| (vec![uniform(r, &[3, 1], -1.0, 1.0), uniform(r, &[1, 5], -1.0, 1.0)], prim(Primitive::Mul)) },
        Case { name: "div", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0), away_from_zero(r, &[3, 4], 0.5, 2.0)], prim(Primitive::Div)) },
        Case { name: "matmul", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], prim(Primitive::MatMul)) },
        Case { name: "matmul (batched)", make: |r| (vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 4, 3], -1.0, 1.0)], prim(Primitive::MatMul)) },
        Case {
            name: "conv2d",
            make: |r| (vec![uniform(r, &[2, 2, 5, 4], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)], prim(Primitive::Conv2d { stride: 1, pad: 1 })),
        },
        Case {
            name: "conv2d (stride 2, no pad)",
            make: |r| (vec![uniform(r, &[1, 2, 6, 5], -1.0, 1.0), uniform(r, &[2, 2, 2, 3], -1.0, 1.0)], prim(Primitive::Conv2d { stride: 2, pad: 0 })),
        },
        Case { name: "max_pool2d", make: |r| (vec![spaced(r, &[2, 2, 4, 6])], prim(Primitive::MaxPool2d { ph: 2, pw: 3 })) },
        Case { name: "relu", make: |r| (vec![away_from_zero(r, &[4, 5], 0.01, 2.0)], prim(Primitive::Relu)) },
        Case { name: "tanh", make: |r| (vec![uniform(r, &[4, 5], -3.0, 3.0)], prim(Primitive::Tanh)) },
        Case { name: "sigmoid", make: |r| (vec![uniform(r, &[4, 5], -4.0, 4.0)], prim(Primitive::Sigmoid)) },
        Case { name: "exp", make: |r| (vec![uniform(r, &[4, 5], -2.0, 2.0)], prim(Primitive::Exp)) },
        Case { name: "log", make: |r| (vec![uniform(r, &[4, 5], 0.2, 3.0)], prim(Primitive::Log)) },
        Case { name: "softmax", make: |r| (vec![uniform(r, &[3, 5], -3.0, 3.0)], prim(Primitive::Softmax { axis: 1 })) },
        Case { name: "softmax (axis 0)", make: |r| (vec![uniform(r, &[4, 2, 3], -3.0, 3.0)], prim(Primitive::Softmax { axis: 0 })) },
        Case {
            name: "concat",
            make: |r| (vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 1], -1.0, 1.0), uniform(r, &[2, 2], -1.0, 1.0)], prim(Primitive::Concat { axis: 1 })),
        },
        Case { name: "slice", make: |r| (vec![uniform(r, &[3, 6, 2], -1.0, 1.0)], prim(Primitive::Slice { axis: 1, start: 2, len: 3 })) },
        Case { name: "reshape", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0)], prim(Primitive::Reshape { shape: vec![2, 6] })) },
        Case { name: "transpose", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0)], prim(Primitive::Transpose)) },
        Case { name: "sum (all)", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0)], prim(Primitive::Sum { axis: None })) },
        Case { name: "sum (axis)", make: |r| (vec![uniform(r, &[3, 4, 2], -1.0, 1.0)], prim(Primitive::Sum { axis: Some(1) })) },
        Case { name: "mean (all)", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0)], prim(Primitive::Mean { axis: None })) },
        Case { name: "mean (axis)", make: |r| (vec![uniform(r, &[3, 4], -1.0, 1.0)], prim(Primitive::Mean { axis: Some(0) })) },
        Case {
            name: "embedding",
            make: |r| {
                let ids: Vec<usize> = (0..5).map(|_| r.random_range(0..4)).collect();
                (vec![uniform(r, &[4, 3], -1.0, 1.0)], prim(Primitive::Embedding { ids }))
            },
        },
        Case {
            name: "dropout",
            make: |r| {
                let seed = r.random();
                (vec![uniform(r, &[4, 5], -1.0, 1.0)], prim(Primitive::Dropout { p: 0.3, training: true, seed }))
            },
        },
        Case { name: "pow", make: |r| (vec![uniform(r, &[4, 3], 0.3, 2.0)], prim(Primitive::Pow { exponent: 2.5 })) },
        Case { name: "pow (integer, signed)", make: |r| (vec![away_from_zero(r, &[4, 3], 0.2, 2.0)], prim(Primitive::Pow { exponent: 3.0 })) },
        Case { name: "softplus", make: |r| (vec![uniform(r, &[4, 5], -5.0, 5.0)], Box::new(|t: &[Tensor]| t[0].softplus())) },
        Case { name: "sqrt", make: |r| (vec![uniform(r, &[4, 5], 0.2, 3.0)], Box::new(|t: &[Tensor]| t[0].sqrt())) },
        Case { name: "log_softmax", make: |r| (vec![uniform(r, &[3, 6], -3.0, 3.0)], Box::new(|t: &[Tensor]| t[0].log_softmax(1))) },
        Case { name: "permute", make: |r| (vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], Box::new(|t: &[Tensor]| t[0].permute(&[2, 0, 1]))) },
        Case {
            name: "matmul_t",
            make: |r| (vec![uniform(r, &[4, 3], -1.0, 1.0), uniform(r, &[2, 4], -1.0, 1.0)], Box::new(|t: &[Tensor]| t[0].matmul_t(&t[1], true, true))),
        },
        Case {
            name: "gather",
            make: |r| {
                let idx: Rc<Vec<isize>> = Rc::new((0..7).map(|_| r.random_range(0..12i64) as isize).collect());
                (vec![uniform(r, &[3, 4], -1.0, 1.0)], Box::new(move |t: &[Tensor]| t[0].gather(idx.clone(), vec![7])))
            },
        },
        Case {
            name: "scatter_add",
            make: |r| {
                let idx: Rc<Vec<isize>> = Rc::new((0..6).map(|_| r.random_range(0..5i64) as isize).collect());
                (vec![uniform(r, &[6], -1.0, 1.0)], Box::new(move |t: &[Tensor]| t[0].scatter_add(idx.clone(), vec![5])))
            },
        },
        Case { name: "max_axis", make: |r| (vec![spaced(r, &[3, 4, 2])], Box::new(|t: &[Tensor]| t[0].max_axis(1))) },
        Case { name: "broadcast_to", make: |r| (vec![uniform(r, &[3, 1], -1.0, 1.0)], Box::new(|t: &[Tensor]| t[0].broadcast_to(&[2, 3, 4]))) },
        Case { name: "sum_to", make: |r| (vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], Box::new(|t: &[Tensor]| t[0].sum_to(&[3, 1]))) },
    ]
}

fn tensors(inputs: &Inputs) -> Vec<Tensor> {
    inputs.iter().map(|(s, v)| Tensor::new(s.clone(), v.clone())).collect()
}

fn attn_params(t: &[Tensor]) -> AttentionParams {
    AttentionParams {
        w_q: t[0].clone(),
        b_q: t[1].clone(),
        w_k: t[2].clone(),
        b_k: t[3].clone(),
        w_v: t[4].clone(),
        b_v: t[5].clone(),
        w_o: t[6].clone(),
        b_o: t[7].clone(),
    }
}

fn attn_inputs(r: &mut ChaCha8Rng, d: usize) -> Inputs {
    let mut v = Vec::new();
    for _ in 0..4 {
        v.push(uniform(r, &[d, d], -0.6, 0.6));
        v.push(uniform(r, &[d], -0.2, 0.2));
    }
    v
}

/// Smallest distance of a feed-forward pre-activation from the ReLU kink
/// that a decoder-block draw must keep, so no probe step crosses it.
const KINK_MARGIN: f64 = 5e-3;

fn decoder_block_inputs(r: &mut ChaCha8Rng) -> Inputs {
    let (tl, s, d, f) = (3, 2, 4, 6);
    let mut inputs = vec![uniform(r, &[tl, d], -1.0, 1.0), uniform(r, &[s, d], -1.0, 1.0)];
    inputs.extend(attn_inputs(r, d));
    inputs.extend(attn_inputs(r, d));
    for _ in 0..3 {
        inputs.push(uniform(r, &[d], 0.5, 1.5));
        inputs.push(uniform(r, &[d], -0.3, 0.3));
    }
    inputs.push(uniform(r, &[f, d], -0.6, 0.6));
    inputs.push(away_from_zero(r, &[f], 0.2, 0.6));
    inputs.push(uniform(r, &[d, f], -0.6, 0.6));
    inputs.push(uniform(r, &[d], -0.2, 0.2));
    inputs
}

fn decoder_params(t: &[Tensor]) -> DecoderBlockParams {
    DecoderBlockParams {
        heads: 2,
        self_attn: attn_params(&t[2..10]),
        cross_attn: attn_params(&t[10..18]),
        ln1: (t[18].clone(), t[19].clone()),
        ln2: (t[20].clone(), t[21].clone()),
        ln3: (t[22].clone(), t[23].clone()),
        ff1: (t[24].clone(), t[25].clone()),
        ff2: (t[26].clone(), t[27].clone()),
    }
}

/// Runs the two attention sublayers and returns min |pre-activation| of the
/// feed-forward hidden layer.
fn ff_kink_margin(t: &[Tensor]) -> f64 {
    let p = decoder_params(t);
    let (tokens, memory) = (t[0].reshape(vec![1, 3, 4]), t[1].reshape(vec![1, 2, 4]));
    Tape::no_grad(|| {
        let (sa, _) = multi_head_attention(&tokens, &tokens, &p.self_attn, p.heads, true).unwrap();
        let x = layer_norm(&tokens.add(&sa), &p.ln1.0, &p.ln1.1, 1e-5);
        let (ca, _) = multi_head_attention(&x, &memory, &p.cross_attn, p.heads, false).unwrap();
        let x = layer_norm(&x.add(&ca), &p.ln2.0, &p.ln2.1, 1e-5);
        linear(&x, &p.ff1.0, Some(&p.ff1.1)).to_vec().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    })
}

pub fn layer_cases() -> Vec<Case> {
    vec![
        Case {
            name: "linear",
            make: |r| {
                (
                    vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[5, 4], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
                    Box::new(|t: &[Tensor]| linear(&t[0], &t[1], Some(&t[2]))),
                )
            },
        },
        Case {
            name: "batch_norm (batch statistics)",
            make: |r| {
                (
                    vec![uniform(r, &[3, 2, 2, 3], -2.0, 2.0), uniform(r, &[2], 0.5, 1.5), uniform(r, &[2], -0.5, 0.5)],
                    Box::new(|t: &[Tensor]| {
                        batch_norm_with_mode(&t[0], &t[1], &t[2], &BatchNormState::new(2), StatsMode::BatchStats, true).unwrap().0
                    }),
                )
            },
        },
        Case {
            name: "batch_norm (running statistics)",
            make: |r| {
                let mut st = BatchNormState::new(3);
                st.running_mean = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
                st.running_var = (0..3).map(|_| r.random_range(0.3..2.0)).collect();
                (
                    vec![uniform(r, &[2, 3, 2, 2], -2.0, 2.0), uniform(r, &[3], 0.5, 1.5), uniform(r, &[3], -0.5, 0.5)],
                    Box::new(move |t: &[Tensor]| {
                        batch_norm_with_mode(&t[0], &t[1], &t[2], &st, StatsMode::RunningStats, false).unwrap().0
                    }),
                )
            },
        },
        Case {
            name: "layer_norm",
            make: |r| {
                (
                    vec![uniform(r, &[3, 5], -2.0, 2.0), uniform(r, &[5], 0.5, 1.5), uniform(r, &[5], -0.5, 0.5)],
                    Box::new(|t: &[Tensor]| layer_norm(&t[0], &t[1], &t[2], 1e-5)),
                )
            },
        },
        Case {
            name: "lstm_cell",
            make: |r| {
                let (b, i, h) = (2, 3, 4);
                (
                    vec![
                        uniform(r, &[b, i], -1.0, 1.0),
                        uniform(r, &[b, h], -1.0, 1.0),
                        uniform(r, &[b, h], -1.0, 1.0),
                        uniform(r, &[4 * h, i], -0.7, 0.7),
                        uniform(r, &[4 * h, h], -0.7, 0.7),
                        uniform(r, &[4 * h], -0.5, 0.5),
                    ],
                    Box::new(|t: &[Tensor]| {
                        let w = LstmWeights { w_ih: t[3].clone(), w_hh: t[4].clone(), bias: t[5].clone() };
                        let (h2, c2) = lstm_cell(&t[0], &t[1], &t[2], &w).unwrap();
                        Tensor::concat(&[h2, c2], 1)
                    }),
                )
            },
        },
        Case {
            name: "attention_2d",
            make: |r| {
                let (a, c, hd) = (3, 2, 3);
                (
                    vec![
                        uniform(r, &[3, 4, c], -1.0, 1.0),
                        uniform(r, &[hd], -1.0, 1.0),
                        uniform(r, &[a, c], -1.0, 1.0),
                        uniform(r, &[a, c, 3, 3], -1.0, 1.0),
                        uniform(r, &[a, hd], -1.0, 1.0),
                        uniform(r, &[a], -1.0, 1.0),
                    ],
                    Box::new(|t: &[Tensor]| {
                        let p = Attention2DParams { w_v: t[2].clone(), neighbor: t[3].clone(), w_h: t[4].clone(), w_e: t[5].clone() };
                        let (g, alpha) = attention_2d(&t[0], &t[1], &p).unwrap();
                        Tensor::concat(&[g, alpha.reshape(vec![12])], 0)
                    }),
                )
            },
        },
        Case {
            name: "transformer_decoder_block",
            make: |r| {
                let inputs = loop {
                    let inputs = decoder_block_inputs(r);
                    if ff_kink_margin(&tensors(&inputs)) > KINK_MARGIN {
                        break inputs;
                    }
                };
                (inputs, Box::new(|t: &[Tensor]| transformer_decoder_block(&t[0], &t[1], &decoder_params(t), true).unwrap()))
            },
        },
        Case {
            name: "sequence_cross_entropy (weighted)",
            make: |r| {
                let target: Vec<usize> = (0..4).map(|_| r.random_range(3..7)).collect();
                (
                    vec![uniform(r, &[4, 7], -2.0, 2.0), uniform(r, &[4], 0.1, 1.0)],
                    Box::new(move |t: &[Tensor]| sequence_cross_entropy(&t[0], &target, Some(&t[1])).unwrap()),
                )
            },
        },
    ]
}

/// Worst relative error of each case over `instances` random draws.
pub fn run_cases(cases: &[Case], instances: usize, eps: f64, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .iter()
        .map(|c| {
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let (inputs, f) = (c.make)(&mut rng);
                worst = worst.max(worst_error(&inputs, f.as_ref(), c.zero_gradient_inputs(), eps, &mut rng));
            }
            (c.name, worst)
        })
        .collect()
}

/// Hessian-vector products through `create_graph` against central
/// differences of the gradient along a random direction.
pub fn second_order_error(cases: &[Case], instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .iter()
        .map(|c| {
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let (inputs, f) = (c.make)(&mut rng);
                let base = tensors(&inputs);
                let out = Tape::no_grad(|| f(&base));
                let r = Tensor::new(out.shape().to_vec(), (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect());
                let (shape, x) = &inputs[0];
                let dir: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let leaf = Tensor::param(shape.clone(), x.clone());
                let mut ts = base.clone();
                ts[0] = leaf.clone();
                let g = gradients(&f(&ts).mul(&r).sum(), &[leaf.clone()], true).unwrap().at(0).clone();
                let s = g.mul(&Tensor::new(shape.clone(), dir.clone())).sum();
                let analytic = gradients(&s, &[leaf], false).unwrap().at(0).to_vec();
                let shift = |sign: f64| -> Vec<f64> { x.iter().zip(&dir).map(|(a, d)| a + sign * EPS * d).collect() };
                // Numeric derivative of the gradient along `dir`, probed per entry.
                let gp = grad_vec(f.as_ref(), &base, &r, shape, &shift(1.0));
                let gm = grad_vec(f.as_ref(), &base, &r, shape, &shift(-1.0));
                for i in 0..x.len() {
                    let numeric = (gp[i] - gm[i]) / (2.0 * EPS);
                    let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max((analytic[i] - numeric).abs() / denom);
                }
            }
            (c.name, worst)
        })
        .collect()
}

fn grad_vec(f: &dyn Fn(&[Tensor]) -> Tensor, base: &[Tensor], r: &Tensor, shape: &[usize], v: &[f64]) -> Vec<f64> {
    let leaf = Tensor::param(shape.to_vec(), v.to_vec());
    let mut ts = base.to_vec();
    ts[0] = leaf.clone();
    gradients(&f(&ts).mul(r).sum(), &[leaf], false).unwrap().at(0).to_vec()
}
