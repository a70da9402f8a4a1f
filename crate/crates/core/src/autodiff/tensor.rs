use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::tape;

/// Dense row-major `f64` tensor with an optional recorded history.
///
/// Cloning is cheap: the node is reference counted. Tensors are bound to the
/// thread that created them.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Option<GradFn>,
    pub(crate) generation: u32,
}

pub(crate) struct GradFn {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Rc<Vec<f64>>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor(Rc::new(Node {
            id: tape::next_id(),
            shape,
            data,
            requires_grad,
            grad_fn,
            generation: tape::generation(),
        }))
    }

    /// Constant tensor (never a differentiation target).
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Self {
        Self::from_parts(shape.into(), Rc::new(data), false, None)
    }

    /// Leaf tensor that gradients can be taken with respect to.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Self {
        Self::from_parts(shape.into(), Rc::new(data), true, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(Vec::new(), vec![v])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![0.0; n])
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![v; n])
    }

    /// Output of an operation. Records `op` when recording is on and any
    /// input requires a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[&Tensor]) -> Self {
        Self::from_op_rc(shape, Rc::new(data), op, inputs)
    }

    pub(crate) fn from_op_rc(shape: Vec<usize>, data: Rc<Vec<f64>>, op: Op, inputs: &[&Tensor]) -> Self {
        let track = tape::is_recording() && inputs.iter().any(|t| t.requires_grad());
        let name = op.name();
        let out = if track {
            let grad_fn = GradFn { op, inputs: inputs.iter().map(|t| (*t).clone()).collect() };
            Self::from_parts(shape, data, true, Some(grad_fn))
        } else {
            Self::from_parts(shape, data, false, None)
        };
        if tape::nan_guard_enabled() && out.0.data.iter().any(|v| !v.is_finite()) {
            tape::report_nonfinite(out.id(), name);
        }
        out
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_rc(&self) -> &Rc<Vec<f64>> {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Nesting depth of the backward pass that created this node.
    pub fn generation(&self) -> u32 {
        self.0.generation
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, no history.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Same values as a fresh differentiable leaf.
    pub fn detach_param(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn> {
        self.0.grad_fn.as_ref()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("id", &self.id())
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

// Long recurrent graphs would otherwise drop recursively and can overflow the
// stack of a test thread.
impl Drop for Node {
    fn drop(&mut self) {
        let Some(grad_fn) = self.grad_fn.take() else { return };
        let mut stack: Vec<Tensor> = grad_fn.inputs;
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.0) {
                if let Some(g) = node.grad_fn.take() {
                    stack.extend(g.inputs);
                }
            }
        }
    }
}
