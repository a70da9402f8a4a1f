use std::collections::{HashMap, HashSet};

use super::tape::Tape;
use super::tensor::Tensor;
use super::AutodiffError;

/// Gradients of a scalar with respect to a list of tensors, in request order.
#[derive(Clone, Debug)]
pub struct GradMap {
    ids: Vec<u64>,
    grads: Vec<Tensor>,
    disconnected: Vec<bool>,
}

impl GradMap {
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Gradient of the `i`-th requested tensor.
    pub fn at(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        self.ids.iter().position(|&id| id == t.id()).map(|i| &self.grads[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }

    /// True when the `i`-th tensor does not influence the loss; its gradient
    /// is then all zeros.
    pub fn is_disconnected(&self, i: usize) -> bool {
        self.disconnected[i]
    }

    pub fn any_disconnected(&self) -> bool {
        self.disconnected.iter().any(|&d| d)
    }
}

/// Reverse-mode gradients of `loss` with respect to `wrt`.
///
/// With `create_graph` the returned gradients carry their own history and can
/// be differentiated again.
pub fn gradients(loss: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<GradMap, AutodiffError> {
    if loss.numel() != 1 {
        return Err(AutodiffError::NotScalar(loss.shape().to_vec()));
    }
    if let Some(i) = wrt.iter().position(|t| !t.requires_grad()) {
        return Err(AutodiffError::NotDifferentiable(i));
    }
    let targets: HashSet<u64> = wrt.iter().map(Tensor::id).collect();

    // Reachable history, in ascending id (topological) order.
    let mut nodes: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    if loss.requires_grad() {
        let mut stack = vec![loss.clone()];
        seen.insert(loss.id());
        while let Some(t) = stack.pop() {
            if let Some(gf) = t.grad_fn() {
                for inp in &gf.inputs {
                    if inp.requires_grad() && seen.insert(inp.id()) {
                        stack.push(inp.clone());
                    }
                }
            }
            nodes.push(t);
        }
    }
    nodes.sort_unstable_by_key(Tensor::id);

    // A node matters only if some requested tensor lies in its history.
    let mut relevant: HashMap<u64, bool> = HashMap::with_capacity(nodes.len());
    for t in &nodes {
        let r = targets.contains(&t.id())
            || t.grad_fn().is_some_and(|gf| gf.inputs.iter().any(|i| relevant.get(&i.id()).copied().unwrap_or(false)));
        relevant.insert(t.id(), r);
    }

    let mut found: HashMap<u64, Tensor> = HashMap::new();
    Tape::with_recording(create_graph, || {
        Tape::next_generation(|| {
            let mut pending: HashMap<u64, Tensor> = HashMap::new();
            if relevant.get(&loss.id()).copied().unwrap_or(false) {
                pending.insert(loss.id(), Tensor::ones(loss.shape().to_vec()));
            }
            for node in nodes.iter().rev() {
                let Some(g) = pending.remove(&node.id()) else { continue };
                if targets.contains(&node.id()) {
                    found.insert(node.id(), g.clone());
                }
                let Some(gf) = node.grad_fn() else { continue };
                let need: Vec<bool> =
                    gf.inputs.iter().map(|i| relevant.get(&i.id()).copied().unwrap_or(false)).collect();
                if !need.iter().any(|&n| n) {
                    continue;
                }
                let contributions = gf.op.backward(&gf.inputs, &need, node, &g);
                for ((inp, gi), &n) in gf.inputs.iter().zip(contributions).zip(&need) {
                    let Some(gi) = gi else { continue };
                    if !n {
                        continue;
                    }
                    debug_assert_eq!(gi.shape(), inp.shape(), "gradient shape for {}", gf.op.name());
                    let acc = match pending.remove(&inp.id()) {
                        Some(prev) => prev.add(&gi),
                        None => gi,
                    };
                    pending.insert(inp.id(), acc);
                }
            }
        })
    });

    let mut grads = Vec::with_capacity(wrt.len());
    let mut disconnected = Vec::with_capacity(wrt.len());
    for t in wrt {
        match found.get(&t.id()) {
            Some(g) => {
                grads.push(g.clone());
                disconnected.push(false);
            }
            None => {
                grads.push(Tensor::zeros(t.shape().to_vec()));
                disconnected.push(true);
            }
        }
    }
    Ok(GradMap { ids: wrt.iter().map(Tensor::id).collect(), grads, disconnected })
}

/// First-order convenience: gradient values as plain vectors.
pub fn gradient_values(loss: &Tensor, wrt: &[Tensor]) -> Result<Vec<Vec<f64>>, AutodiffError> {
    Ok(gradients(loss, wrt, false)?.into_vec().into_iter().map(|g| g.to_vec()).collect())
}
