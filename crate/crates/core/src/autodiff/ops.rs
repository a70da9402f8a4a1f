//! Differentiable operations.
//!
//! Each backward rule is written in terms of other tensor operations, so a
//! backward pass executed while recording produces a differentiable graph
//! of its own.

use std::rc::Rc;

use super::tensor::{numel, Tensor};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    PowScalar(f64),
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    MatMul { ta: bool, tb: bool },
    SumAxis,
    SumAll,
    BroadcastTo { from: Vec<usize> },
    SumTo { from: Vec<usize> },
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    Reshape { from: Vec<usize> },
    Gather { index: Rc<Vec<isize>>, src_shape: Vec<usize> },
    ScatterAdd { index: Rc<Vec<isize>>, src_shape: Vec<usize> },
    Concat { axis: usize, sizes: Vec<usize> },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::PowScalar(_) => "pow",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Softplus => "softplus",
            Op::MatMul { .. } => "matmul",
            Op::SumAxis => "sum_axis",
            Op::SumAll => "sum",
            Op::BroadcastTo { .. } => "broadcast_to",
            Op::SumTo { .. } => "sum_to",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Reshape { .. } => "reshape",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Concat { .. } => "concat",
        }
    }

    /// Vector-Jacobian product: gradient contributions for each input.
    /// Only inputs flagged in `need` get a contribution.
    pub(crate) fn backward(&self, inputs: &[Tensor], need: &[bool], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let need = |i: usize| need[i];
        match self {
            Op::Add => vec![
                need(0).then(|| g.sum_to(inputs[0].shape())),
                need(1).then(|| g.sum_to(inputs[1].shape())),
            ],
            Op::Sub => vec![
                need(0).then(|| g.sum_to(inputs[0].shape())),
                need(1).then(|| g.neg().sum_to(inputs[1].shape())),
            ],
            Op::Mul => vec![
                need(0).then(|| g.mul(&inputs[1]).sum_to(inputs[0].shape())),
                need(1).then(|| g.mul(&inputs[0]).sum_to(inputs[1].shape())),
            ],
            Op::Div => vec![
                need(0).then(|| g.div(&inputs[1]).sum_to(inputs[0].shape())),
                need(1).then(|| g.mul(out).div(&inputs[1]).neg().sum_to(inputs[1].shape())),
            ],
            Op::MatMul { ta, tb } => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let ga = need(0).then(|| if !ta { g.matmul_t(b, false, !tb) } else { b.matmul_t(g, *tb, true) });
                let gb = need(1).then(|| if !tb { a.matmul_t(g, !ta, false) } else { g.matmul_t(a, true, *ta) });
                vec![ga, gb]
            }
            Op::Concat { axis, sizes } => {
                let mut start = 0;
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &len)| {
                        let piece = need(i).then(|| g.narrow(*axis, start, len));
                        start += len;
                        piece
                    })
                    .collect()
            }
            _ if !need(0) => vec![None],
            Op::Neg => vec![Some(g.neg())],
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::AddScalar => vec![Some(g.clone())],
            Op::PowScalar(p) => {
                let d = inputs[0].powf(p - 1.0).scale(*p);
                vec![Some(g.mul(&d))]
            }
            Op::Exp => vec![Some(g.mul(out))],
            Op::Log => vec![Some(g.div(&inputs[0]))],
            Op::Tanh => {
                let d = out.mul(out).neg().add_scalar(1.0);
                vec![Some(g.mul(&d))]
            }
            Op::Sigmoid => {
                let d = out.mul(&out.neg().add_scalar(1.0));
                vec![Some(g.mul(&d))]
            }
            Op::Relu => {
                let mask: Vec<f64> = inputs[0].data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                let mask = Tensor::new(inputs[0].shape().to_vec(), mask);
                vec![Some(g.mul(&mask))]
            }
            Op::Softplus => vec![Some(g.mul(&inputs[0].sigmoid()))],
            Op::SumAxis | Op::SumAll => vec![Some(g.broadcast_to(inputs[0].shape()))],
            Op::BroadcastTo { from } => vec![Some(g.sum_to(from))],
            Op::SumTo { from } => vec![Some(g.broadcast_to(from))],
            Op::Softmax { axis } => {
                let s = g.mul(out).sum_axis(*axis, true);
                vec![Some(out.mul(&g.sub(&s)))]
            }
            Op::LogSoftmax { axis } => {
                let s = g.sum_axis(*axis, true);
                vec![Some(g.sub(&out.exp().mul(&s)))]
            }
            Op::Reshape { from } => vec![Some(g.reshape(from.clone()))],
            Op::Gather { index, src_shape } => vec![Some(g.scatter_add(index.clone(), src_shape.clone()))],
            Op::ScatterAdd { index, src_shape } => vec![Some(g.gather(index.clone(), src_shape.clone()))],
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps each flat index of `out_shape` to the flat index of a tensor of
/// `in_shape` broadcast against it.
enum BroadcastMap {
    Identity,
    Scalar,
    Periodic(usize),
    General(Vec<usize>),
}

impl BroadcastMap {
    fn new(in_shape: &[usize], out_shape: &[usize]) -> Self {
        let n_in = numel(in_shape);
        if in_shape == out_shape {
            return BroadcastMap::Identity;
        }
        if n_in == 1 {
            return BroadcastMap::Scalar;
        }
        let trimmed: Vec<usize> = in_shape.iter().copied().skip_while(|&d| d == 1).collect();
        if trimmed.len() <= out_shape.len() && out_shape[out_shape.len() - trimmed.len()..] == trimmed[..] {
            return BroadcastMap::Periodic(n_in);
        }
        let offset = out_shape.len() - in_shape.len();
        let in_strides = strides(in_shape);
        let mut eff = vec![0; out_shape.len()];
        for (i, &d) in in_shape.iter().enumerate() {
            if d != 1 {
                eff[i + offset] = in_strides[i];
            }
        }
        let total = numel(out_shape);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; out_shape.len()];
        let mut pos = 0usize;
        for _ in 0..total {
            map.push(pos);
            for ax in (0..out_shape.len()).rev() {
                idx[ax] += 1;
                pos += eff[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                pos -= eff[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        BroadcastMap::General(map)
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            BroadcastMap::Identity => i,
            BroadcastMap::Scalar => 0,
            BroadcastMap::Periodic(p) => i % p,
            BroadcastMap::General(m) => m[i],
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let shape = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("{}: cannot broadcast {:?} with {:?}", op.name(), a.shape(), b.shape()));
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let ma = BroadcastMap::new(a.shape(), &shape);
        let mb = BroadcastMap::new(b.shape(), &shape);
        (0..numel(&shape)).map(|i| f(ad[ma.at(i)], bd[mb.at(i)])).collect()
    };
    Tensor::from_op(shape, data, op, &[a, b])
}

fn unary(a: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_op(a.shape().to_vec(), data, op, &[a])
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    // op(A) is m x k; A is stored k x m when transposed.
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices have the lengths implied by (m, k, n) and the strides
    // stay inside them; asserted by callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Div, |x, y| x / y)
    }

    pub fn neg(&self) -> Tensor {
        unary(self, Op::Neg, |x| -x)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, Op::Scale(c), |x| x * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, Op::AddScalar, |x| x + c)
    }

    pub fn powf(&self, p: f64) -> Tensor {
        unary(self, Op::PowScalar(p), |x| x.powf(p))
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    pub fn sqrt(&self) -> Tensor {
        self.powf(0.5)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, Op::Exp, f64::exp)
    }

    pub fn log(&self) -> Tensor {
        unary(self, Op::Log, f64::ln)
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, Op::Sigmoid, sigmoid)
    }

    pub fn relu(&self) -> Tensor {
        unary(self, Op::Relu, |x| x.max(0.0))
    }

    pub fn softplus(&self) -> Tensor {
        unary(self, Op::Softplus, softplus)
    }

    /// Matrix product of 2-D tensors, or batched product of 3-D tensors with
    /// equal batch size.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.matmul_t(other, false, false)
    }

    /// Matrix product with either operand optionally transposed (last two axes).
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Tensor {
        let (sa, sb) = (self.shape(), other.shape());
        assert!(
            sa.len() == sb.len() && (sa.len() == 2 || sa.len() == 3),
            "matmul: unsupported ranks {sa:?} x {sb:?}"
        );
        let batch = if sa.len() == 3 {
            assert_eq!(sa[0], sb[0], "matmul: batch mismatch {sa:?} x {sb:?}");
            sa[0]
        } else {
            1
        };
        let r = sa.len() - 2;
        let (m, ka) = if ta { (sa[r + 1], sa[r]) } else { (sa[r], sa[r + 1]) };
        let (kb, n) = if tb { (sb[r + 1], sb[r]) } else { (sb[r], sb[r + 1]) };
        assert_eq!(ka, kb, "matmul: inner dims differ {sa:?} (t={ta}) x {sb:?} (t={tb})");
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.data(), other.data());
        for bi in 0..batch {
            gemm(
                m,
                ka,
                n,
                &ad[bi * m * ka..(bi + 1) * m * ka],
                ta,
                &bd[bi * ka * n..(bi + 1) * ka * n],
                tb,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let shape = if sa.len() == 3 { vec![batch, m, n] } else { vec![m, n] };
        Tensor::from_op(shape, out, Op::MatMul { ta, tb }, &[self, other])
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let d = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (x, &v) in dst.iter_mut().zip(&d[base..base + inner]) {
                    *x += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        let t = Tensor::from_op(shape, out, Op::SumAxis, &[self]);
        if keepdim {
            t
        } else {
            let mut s = self.shape().to_vec();
            s.remove(axis);
            t.reshape(s)
        }
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis, keepdim).scale(1.0 / n)
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s], Op::SumAll, &[self])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let target = broadcast_shape(self.shape(), shape);
        assert_eq!(target.as_deref(), Some(shape), "broadcast_to: {:?} -> {:?}", self.shape(), shape);
        let map = BroadcastMap::new(self.shape(), shape);
        let d = self.data();
        let data = (0..numel(shape)).map(|i| d[map.at(i)]).collect();
        Tensor::from_op(shape.to_vec(), data, Op::BroadcastTo { from: self.shape().to_vec() }, &[self])
    }

    /// Sums broadcast dimensions away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let map = BroadcastMap::new(shape, self.shape());
        let mut out = vec![0.0; numel(shape)];
        for (i, &v) in self.data().iter().enumerate() {
            out[map.at(i)] += v;
        }
        Tensor::from_op(shape.to_vec(), out, Op::SumTo { from: self.shape().to_vec() }, &[self])
    }

    pub fn softmax(&self, axis: usize) -> Tensor {
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let d = self.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (d[at(l)] - max).exp();
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] /= z;
                }
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, Op::Softmax { axis }, &[self])
    }

    pub fn log_softmax(&self, axis: usize) -> Tensor {
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let d = self.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|l| (d[at(l)] - max).exp()).sum::<f64>().ln();
                for l in 0..len {
                    out[at(l)] = d[at(l)] - lse;
                }
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, Op::LogSoftmax { axis }, &[self])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        assert_eq!(numel(&shape), self.numel(), "reshape: {:?} -> {:?}", self.shape(), shape);
        if shape == self.shape() {
            return self.clone();
        }
        Tensor::from_op_rc(shape, self.data_rc().clone(), Op::Reshape { from: self.shape().to_vec() }, &[self])
    }

    /// `out[i] = self[index[i]]`, or 0 where `index[i] < 0`.
    pub fn gather(&self, index: Rc<Vec<isize>>, shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        assert_eq!(numel(&shape), index.len(), "gather: index length vs shape {shape:?}");
        let d = self.data();
        let data = index.iter().map(|&j| if j < 0 { 0.0 } else { d[j as usize] }).collect();
        Tensor::from_op(shape, data, Op::Gather { index, src_shape: self.shape().to_vec() }, &[self])
    }

    /// Adjoint of [`Tensor::gather`]: `out[index[i]] += self[i]`.
    pub fn scatter_add(&self, index: Rc<Vec<isize>>, shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        assert_eq!(self.numel(), index.len(), "scatter_add: index length vs input");
        let mut out = vec![0.0; numel(&shape)];
        for (&j, &v) in index.iter().zip(self.data()) {
            if j >= 0 {
                out[j as usize] += v;
            }
        }
        Tensor::from_op(shape, out, Op::ScatterAdd { index, src_shape: self.shape().to_vec() }, &[self])
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.ndim(), first.len(), "concat: rank mismatch");
            for (ax, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(ax == axis || a == b, "concat: shape mismatch {:?} vs {:?}", p.shape(), first);
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut shape = first.to_vec();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                let chunk = len * inner;
                out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::from_op(shape, out, Op::Concat { axis, sizes }, &refs)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let shape = self.shape();
        assert!(start + len <= shape[axis], "narrow: {start}+{len} exceeds {:?} on axis {axis}", shape);
        let index = super::index::narrow(shape, axis, start, len);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.gather(index, out_shape)
    }

    pub fn permute(&self, perm: &[usize]) -> Tensor {
        let index = super::index::permute(self.shape(), perm);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        self.gather(index, shape)
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Tensor {
        let n = self.ndim();
        assert!(n >= 2, "transpose needs rank >= 2");
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(&perm)
    }

    /// Multiplies by a saved inverted-dropout mask. Identity when not training.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut impl rand::Rng) -> Tensor {
        if !training || p <= 0.0 {
            return self.clone();
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> =
            (0..self.numel()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        self.mul(&Tensor::new(self.shape().to_vec(), mask))
    }

    /// Row lookup in a `[vocab, dim]` table.
    pub fn embedding(&self, ids: &[usize]) -> Tensor {
        assert_eq!(self.ndim(), 2, "embedding table must be 2-D");
        let (v, d) = (self.shape()[0], self.shape()[1]);
        let mut index = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding id {id} out of range {v}");
            index.extend((0..d).map(|j| (id * d + j) as isize));
        }
        self.gather(Rc::new(index), vec![ids.len(), d])
    }

    /// 2-D convolution of `[N, C, H, W]` with `[O, C, kh, kw]` weights.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (xs, ws) = (self.shape(), weight.shape());
        assert!(xs.len() == 4 && ws.len() == 4 && xs[1] == ws[1], "conv2d: {xs:?} with {ws:?}");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d: kernel larger than padded input");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let index = super::index::im2col([n, c, h, w], [kh, kw], stride, pad);
        let cols = self.gather(index, vec![n * oh * ow, c * kh * kw]);
        let wm = weight.reshape(vec![o, c * kh * kw]);
        cols.matmul_t(&wm, false, true).reshape(vec![n, oh * ow, o]).permute(&[0, 2, 1]).reshape(vec![n, o, oh, ow])
    }

    /// Non-overlapping max pooling over `[N, C, H, W]` (trailing rows and
    /// columns that do not fill a window are dropped).
    pub fn max_pool2d(&self, ph: usize, pw: usize) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 4, "max_pool2d expects [N, C, H, W]");
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / ph, w / pw);
        assert!(oh > 0 && ow > 0, "max_pool2d: window larger than input");
        let d = self.data();
        let mut index = Vec::with_capacity(nc * oh * ow);
        for p in 0..nc {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = p * h * w + i * ph * w + j * pw;
                    for di in 0..ph {
                        for dj in 0..pw {
                            let at = p * h * w + (i * ph + di) * w + j * pw + dj;
                            if d[at] > d[best] {
                                best = at;
                            }
                        }
                    }
                    index.push(best as isize);
                }
            }
        }
        self.gather(Rc::new(index), vec![s[0], s[1], oh, ow])
    }

    /// Maximum along `axis` (axis removed), routing gradient to the arg-max.
    pub fn max_axis(&self, axis: usize) -> Tensor {
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let d = self.data();
        let mut index = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let at = (o * len + l) * inner + i;
                    if d[at] > d[best] {
                        best = at;
                    }
                }
                index.push(best as isize);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        self.gather(Rc::new(index), shape)
    }

    /// Flattens all leading axes: `[.., d]` -> `[n, d]`.
    pub fn flatten_rows(&self) -> Tensor {
        let d = *self.shape().last().expect("flatten_rows on scalar");
        self.reshape(vec![self.numel() / d, d])
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
