use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Nodes reachable from `root` through differentiable edges, inputs before
/// the ops that consume them.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (tensor, children already pushed)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.node_id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(f) = &t.node.grad_fn {
            for inp in f.inputs.iter().filter(|i| i.requires_grad()) {
                if !visited.contains(&inp.node_id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order
}

impl Tensor {
    /// Reverse-mode sweep from a scalar. Gradients are added into the slot of
    /// every participating leaf, so repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Gradient(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Gradient(
                "loss is not connected to any leaf that requires grad".into(),
            ));
        }

        let order = topo_order(self);
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.node_id(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(grad) = pending.remove(&t.node_id()) else {
                continue;
            };
            let Some(f) = &t.node.grad_fn else {
                t.accumulate_grad(&grad);
                continue;
            };
            let input_grads = f.op.vjp(&f.inputs, t, &grad);
            for (inp, g) in f.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !inp.requires_grad() {
                    continue;
                }
                match pending.get_mut(&inp.node_id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(inp.node_id(), g);
                    }
                }
            }
        }
        Ok(())
    }
}
