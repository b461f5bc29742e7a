use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{invalid, shape_err, Result};

use super::ops::Op;

/// Dense row-major `f64` array that can take part in a reverse-mode graph.
///
/// Cloning is cheap: clones share storage and the gradient slot. Values are
/// immutable once built; optimizer updates replace the tensor wholesale.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Arc<Node>,
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Mutex<Option<Vec<f64>>>,
    pub(crate) grad_fn: Option<GradFn>,
}

pub(crate) struct GradFn {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return shape_err(format!("shape {shape:?} has a zero-sized axis"));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return shape_err(format!(
            "shape {shape:?} holds {numel} values, got {len}"
        ));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Tensor {
        Tensor {
            node: Arc::new(Node {
                shape,
                values,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    /// Constant tensor; never accumulates gradient.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, values.len())?;
        Ok(Self::build(shape.to_vec(), values, false, None))
    }

    /// Leaf tensor that accumulates gradient during `backward`.
    pub fn leaf(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, values.len())?;
        Ok(Self::build(shape.to_vec(), values, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Result of a differentiable op. The graph edge is only kept when some
    /// input participates in differentiation.
    pub(crate) fn from_op(shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: Vec<Tensor>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        if inputs.iter().any(Tensor::requires_grad) {
            Self::build(shape, values, true, Some(GradFn { op, inputs }))
        } else {
            Self::build(shape, values, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.node.values
    }

    pub fn numel(&self) -> usize {
        self.node.values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return invalid(format!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.node.values[0])
    }

    /// Accumulated gradient, if any has been written.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Accumulated gradient, with an untouched slot reading as zeros.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.node.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Same tensor re-tagged with a different shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, self.numel())?;
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.node.values.clone(),
            Op::Reshape,
            vec![self.clone()],
        ))
    }

    /// Values-only copy cut out of the differentiation graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.node.shape.clone(), self.node.values.clone(), false, None)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.node, &other.node)
    }

    pub(crate) fn node_id(&self) -> usize {
        Arc::as_ptr(&self.node) as usize
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.values().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("values", &preview)
            .finish()
    }
}

/// Integer class map of shape (b, w, h). Pixels equal to the ignore id are
/// skipped by losses and metrics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    classes: Vec<usize>,
}

impl LabelMap {
    pub fn new(shape: [usize; 3], classes: Vec<usize>) -> Result<LabelMap> {
        check_shape(&shape, classes.len())?;
        Ok(LabelMap { shape, classes })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Stack single-image maps (1, w, h) or (w, h)-sized slices into a batch.
    pub fn concat(maps: &[&LabelMap]) -> Result<LabelMap> {
        let first = maps
            .first()
            .ok_or_else(|| crate::Error::InvalidArgument("concat of zero label maps".into()))?;
        let [_, w, h] = first.shape;
        let mut classes = Vec::new();
        let mut b = 0;
        for m in maps {
            if m.shape[1] != w || m.shape[2] != h {
                return shape_err(format!("label map {:?} vs {:?}", m.shape, first.shape));
            }
            b += m.shape[0];
            classes.extend_from_slice(&m.classes);
        }
        LabelMap::new([b, w, h], classes)
    }
}
