use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::broadcast_shape;
use super::tensor::{numel, Tensor};
use super::AutodiffError;

/// Named primitive with its static arguments, for checked dispatch.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Conv2d { stride: usize, pad: usize },
    MaxPool2d { ph: usize, pw: usize },
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax { axis: usize },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Reshape { shape: Vec<usize> },
    Transpose,
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Embedding { ids: Vec<usize> },
    /// Mask drawn from a ChaCha8 stream seeded with `seed`.
    Dropout { p: f64, training: bool, seed: u64 },
    Pow { exponent: f64 },
}

fn arity(prim: &Primitive) -> Option<usize> {
    match prim {
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::MatMul => Some(2),
        Primitive::Conv2d { .. } => Some(2),
        Primitive::Concat { .. } => None,
        _ => Some(1),
    }
}

fn mismatch(prim: &Primitive, inputs: &[Tensor]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: format!("{prim:?}"),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

/// Validates `inputs` for `prim` and applies it.
pub fn apply_primitive(prim: &Primitive, inputs: &[Tensor]) -> Result<Tensor, AutodiffError> {
    let bad = || mismatch(prim, inputs);
    match arity(prim) {
        Some(n) if inputs.len() != n => return Err(bad()),
        None if inputs.is_empty() => return Err(bad()),
        _ => {}
    }
    let x = &inputs[0];
    let axis_ok = |axis: usize| axis < x.ndim();
    let out = match prim {
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
            let y = &inputs[1];
            broadcast_shape(x.shape(), y.shape()).ok_or_else(bad)?;
            if *prim == Primitive::Div && y.data().iter().any(|&v| v == 0.0) {
                return Err(AutodiffError::NumericDomain("division by zero".into()));
            }
            match prim {
                Primitive::Add => x.add(y),
                Primitive::Sub => x.sub(y),
                Primitive::Mul => x.mul(y),
                _ => x.div(y),
            }
        }
        Primitive::MatMul => {
            let (a, b) = (x.shape(), inputs[1].shape());
            let ok = a.len() == b.len()
                && (a.len() == 2 || (a.len() == 3 && a[0] == b[0]))
                && a[a.len() - 1] == b[b.len() - 2];
            if !ok {
                return Err(bad());
            }
            x.matmul(&inputs[1])
        }
        Primitive::Conv2d { stride, pad } => {
            let (xs, ws) = (x.shape(), inputs[1].shape());
            let ok = *stride > 0
                && xs.len() == 4
                && ws.len() == 4
                && xs[1] == ws[1]
                && xs[2] + 2 * pad >= ws[2]
                && xs[3] + 2 * pad >= ws[3];
            if !ok {
                return Err(bad());
            }
            x.conv2d(&inputs[1], *stride, *pad)
        }
        Primitive::MaxPool2d { ph, pw } => {
            let s = x.shape();
            if s.len() != 4 || *ph == 0 || *pw == 0 || s[2] < *ph || s[3] < *pw {
                return Err(bad());
            }
            x.max_pool2d(*ph, *pw)
        }
        Primitive::Relu => x.relu(),
        Primitive::Tanh => x.tanh(),
        Primitive::Sigmoid => x.sigmoid(),
        Primitive::Exp => x.exp(),
        Primitive::Log => {
            if x.data().iter().any(|&v| v <= 0.0) {
                return Err(AutodiffError::NumericDomain("log of a non-positive value".into()));
            }
            x.log()
        }
        Primitive::Softmax { axis } => {
            if !axis_ok(*axis) {
                return Err(bad());
            }
            x.softmax(*axis)
        }
        Primitive::Concat { axis } => {
            let ok = axis_ok(*axis)
                && inputs.iter().all(|t| {
                    t.ndim() == x.ndim() && t.shape().iter().zip(x.shape()).enumerate().all(|(i, (a, b))| i == *axis || a == b)
                });
            if !ok {
                return Err(bad());
            }
            Tensor::concat(inputs, *axis)
        }
        Primitive::Slice { axis, start, len } => {
            if !axis_ok(*axis) || start + len > x.shape()[*axis] {
                return Err(bad());
            }
            x.narrow(*axis, *start, *len)
        }
        Primitive::Reshape { shape } => {
            if numel(shape) != x.numel() {
                return Err(bad());
            }
            x.reshape(shape.clone())
        }
        Primitive::Transpose => {
            if x.ndim() < 2 {
                return Err(bad());
            }
            x.transpose()
        }
        Primitive::Sum { axis } | Primitive::Mean { axis } => {
            let mean = matches!(prim, Primitive::Mean { .. });
            match axis {
                Some(a) if !axis_ok(*a) => return Err(bad()),
                Some(a) if mean => x.mean_axis(*a, false),
                Some(a) => x.sum_axis(*a, false),
                None if mean => x.mean(),
                None => x.sum(),
            }
        }
        Primitive::Embedding { ids } => {
            if x.ndim() != 2 {
                return Err(bad());
            }
            if let Some(&id) = ids.iter().find(|&&id| id >= x.shape()[0]) {
                return Err(AutodiffError::IndexOutOfRange { index: id, len: x.shape()[0] });
            }
            x.embedding(ids)
        }
        Primitive::Dropout { p, training, seed } => {
            if !(0.0..1.0).contains(p) {
                return Err(AutodiffError::NumericDomain(format!("dropout rate {p} outside [0, 1)")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            x.dropout(*p, *training, &mut rng)
        }
        Primitive::Pow { exponent } => {
            if exponent.fract() != 0.0 && x.data().iter().any(|&v| v < 0.0) {
                return Err(AutodiffError::NumericDomain("fractional power of a negative value".into()));
            }
            x.powf(*exponent)
        }
    };
    Ok(out)
}
