//! Inference-time fusion of the trained networks.
//!
//! Given per-network softmax outputs stacked as (n, b, c, w, h):
//! - `decode_single` takes the argmax of one network,
//! - `ensemble_mc` (max confidence) takes, per class, the maximum over the
//!   network axis and then the argmax over classes,
//! - `ensemble_sv` (soft voting) sums over the network axis and takes the
//!   argmax over classes.
//!
//! All ties resolve to the lowest index.

use crate::diffcore::kernels::argmax_channels;
use crate::diffcore::{ProbMap, Tensor};
use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Debug)]
pub struct EnsembleStack {
    probs: Tensor,
}

impl EnsembleStack {
    pub fn new(probs: Tensor) -> Result<EnsembleStack> {
        let s = probs.shape();
        if s.len() != 5 || s[2] < 2 {
            return shape_err(format!("ensemble stack must be (n,b,c>=2,w,h), got {s:?}"));
        }
        Ok(EnsembleStack { probs: probs.detach() })
    }

    /// Stacks per-network probability maps along a new leading axis.
    pub fn from_maps(maps: &[ProbMap]) -> Result<EnsembleStack> {
        let first = maps.first().ok_or_else(|| crate::Error::InvalidArgument("empty ensemble".into()))?;
        let mut shape = vec![maps.len()];
        shape.extend_from_slice(first.shape());
        let mut v = Vec::with_capacity(shape.iter().product());
        for m in maps {
            if m.shape() != first.shape() {
                return shape_err(format!("stack member {:?} vs {:?}", m.shape(), first.shape()));
            }
            v.extend_from_slice(m.values());
        }
        EnsembleStack::new(Tensor::new(&shape, v)?)
    }

    /// Stacks raw (b, c, w, h) probability arrays.
    pub fn from_raw(slice_shape: &[usize], slices: Vec<Vec<f64>>) -> Result<EnsembleStack> {
        let mut shape = vec![slices.len()];
        shape.extend_from_slice(slice_shape);
        EnsembleStack::new(Tensor::new(&shape, slices.concat())?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.probs
    }

    pub fn num_networks(&self) -> usize {
        self.probs.shape()[0]
    }

    fn slice_shape(&self) -> &[usize] {
        &self.probs.shape()[1..]
    }

    fn slice_len(&self) -> usize {
        self.slice_shape().iter().product()
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let len = self.slice_len();
        &self.probs.values()[j * len..(j + 1) * len]
    }

    fn reduce(&self, init: f64, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut acc = vec![init; self.slice_len()];
        for j in 0..self.num_networks() {
            acc.iter_mut().zip(self.slice(j)).for_each(|(a, &v)| *a = f(*a, v));
        }
        acc
    }

    fn class_map(&self, fused: &[f64]) -> ClassMap {
        let s = self.slice_shape();
        ClassMap {
            shape: [s[0], s[2], s[3]],
            num_classes: s[1],
            classes: argmax_channels(s, fused),
        }
    }
}

/// Decoded prediction of shape (b, w, h) with values in `[0, c)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    shape: [usize; 3],
    num_classes: usize,
    classes: Vec<usize>,
}

impl ClassMap {
    pub fn new(shape: [usize; 3], num_classes: usize, classes: Vec<usize>) -> Result<ClassMap> {
        if classes.len() != shape.iter().product::<usize>() {
            return shape_err(format!("class map {shape:?} with {} values", classes.len()));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
            return invalid(format!("class {bad} out of range for {num_classes} classes"));
        }
        Ok(ClassMap { shape, num_classes, classes })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }
}

/// Per-pixel argmax of network `j` alone.
pub fn decode_single(stack: &EnsembleStack, j: usize) -> Result<ClassMap> {
    if j >= stack.num_networks() {
        return invalid(format!("network {j} out of range for an ensemble of {}", stack.num_networks()));
    }
    Ok(stack.class_map(stack.slice(j)))
}

/// Max confidence: the class that reaches the single highest probability
/// over all networks.
pub fn ensemble_mc(stack: &EnsembleStack) -> ClassMap {
    stack.class_map(&stack.reduce(f64::NEG_INFINITY, f64::max))
}

/// Soft voting: argmax of the summed probabilities.
pub fn ensemble_sv(stack: &EnsembleStack) -> ClassMap {
    stack.class_map(&stack.reduce(0.0, |a, v| a + v))
}
