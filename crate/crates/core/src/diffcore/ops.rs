use crate::error::{invalid, shape_err, Error, Result};

use super::kernels::{self, ConvGeometry};
use super::tensor::{LabelMap, Tensor};

/// Lower clamp applied to probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

pub(crate) enum Op {
    Reshape,
    Add,
    Mul,
    Scale(f64),
    Sum,
    Mean,
    Relu,
    Conv2d(ConvGeometry),
    Softmax,
    CrossEntropy { target: CeTarget, count: usize },
}

pub(crate) enum CeTarget {
    /// Dense per-class weights of the same shape as the prediction.
    Dense(Vec<f64>),
    /// Class index per pixel; `None` marks an ignored pixel.
    Index(Vec<Option<usize>>),
}

/// Probability map of shape (b, c, w, h): each pixel's class slice sums to 1.
#[derive(Clone, Debug)]
pub struct ProbMap(Tensor);

impl ProbMap {
    /// Wraps an already normalized tensor. Only the shape is checked.
    pub fn from_tensor(t: Tensor) -> Result<ProbMap> {
        if t.shape().len() != 4 || t.shape()[1] < 2 {
            return shape_err(format!("probability map must be (b,c>=2,w,h), got {:?}", t.shape()));
        }
        Ok(ProbMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn num_classes(&self) -> usize {
        self.0.shape()[1]
    }
}

/// Target of a pixel-wise cross-entropy.
#[derive(Clone, Copy)]
pub enum CeTargetRef<'a> {
    /// One-hot (or any dense) tensor shaped like the prediction. Treated as a
    /// constant: no gradient flows into it.
    OneHot(&'a Tensor),
    Labels(&'a LabelMap),
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let v = self.values().iter().zip(other.values()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), v, Op::Add, vec![self.clone(), other.clone()]))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let v = self.values().iter().zip(other.values()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), v, Op::Mul, vec![self.clone(), other.clone()]))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let v = self.values().iter().map(|a| a * k).collect();
        Tensor::from_op(self.shape().to_vec(), v, Op::Scale(k), vec![self.clone()])
    }

    pub fn sum(&self) -> Tensor {
        let s = self.values().iter().sum();
        Tensor::from_op(vec![1], vec![s], Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.values().iter().sum();
        Tensor::from_op(vec![1], vec![s / self.numel() as f64], Op::Mean, vec![self.clone()])
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&self) -> Tensor {
        let v = self.values().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        Tensor::from_op(self.shape().to_vec(), v, Op::Relu, vec![self.clone()])
    }
}

/// Sum of scalar tensors, left to right.
pub fn add_all(terms: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("add_all over zero terms".into()))?;
    rest.iter().try_fold(first.clone(), |acc, t| acc.add(t))
}

/// Cross-correlation of (b, cin, w, h) input with (cout, cin, k, k) weights.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::from_shapes(input.shape(), weight.shape(), padding)?;
    if bias.shape() != [g.out_channels] {
        return shape_err(format!("conv2d bias must be ({}), got {:?}", g.out_channels, bias.shape()));
    }
    let out = kernels::conv2d_forward(&g, input.values(), weight.values(), bias.values());
    Ok(Tensor::from_op(
        g.out_shape(),
        out,
        Op::Conv2d(g),
        vec![input.clone(), weight.clone(), bias.clone()],
    ))
}

/// Per-pixel softmax over the class axis of (b, c, w, h) logits.
pub fn softmax_channels(logits: &Tensor) -> Result<ProbMap> {
    if logits.shape().len() != 4 || logits.shape()[1] < 2 {
        return shape_err(format!("softmax_channels needs (b,c>=2,w,h), got {:?}", logits.shape()));
    }
    if let Some(bad) = logits.values().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("softmax_channels logit {bad}")));
    }
    let p = kernels::softmax_channels(logits.shape(), logits.values());
    Ok(ProbMap(Tensor::from_op(logits.shape().to_vec(), p, Op::Softmax, vec![logits.clone()])))
}

/// Mean over scored pixels of `-log p[target]`, with the log clamped at
/// `ln(1e-12)`. Pixels whose label equals `ignore_index` are skipped.
pub fn cross_entropy_mean(p: &ProbMap, target: CeTargetRef<'_>, ignore_index: Option<usize>) -> Result<Tensor> {
    let shape = p.shape();
    let (b, c) = (shape[0], shape[1]);
    let plane = shape[2] * shape[3];
    let probs = p.values();

    let (target, count, loss_sum) = match target {
        CeTargetRef::OneHot(t) => {
            if t.shape() != shape {
                return shape_err(format!("one-hot target {:?} vs prediction {:?}", t.shape(), shape));
            }
            let mut s = 0.0;
            for (&pv, &tv) in probs.iter().zip(t.values()) {
                if tv != 0.0 {
                    s -= tv * pv.max(LOG_CLAMP).ln();
                }
            }
            (CeTarget::Dense(t.values().to_vec()), b * plane, s)
        }
        CeTargetRef::Labels(labels) => {
            if labels.shape() != [b, shape[2], shape[3]] {
                return shape_err(format!("label map {:?} vs prediction {:?}", labels.shape(), shape));
            }
            let mut idx = Vec::with_capacity(b * plane);
            let mut s = 0.0;
            let mut count = 0;
            for (i, &cls) in labels.classes().iter().enumerate() {
                if Some(cls) == ignore_index {
                    idx.push(None);
                    continue;
                }
                if cls >= c {
                    return invalid(format!("target class {cls} out of range for {c} classes"));
                }
                let (bi, px) = (i / plane, i % plane);
                s -= probs[(bi * c + cls) * plane + px].max(LOG_CLAMP).ln();
                count += 1;
                idx.push(Some(cls));
            }
            (CeTarget::Index(idx), count, s)
        }
    };
    if count == 0 {
        return invalid("cross-entropy over an empty set of scored pixels");
    }
    Ok(Tensor::from_op(
        vec![1],
        vec![loss_sum / count as f64],
        Op::CrossEntropy { target, count },
        vec![p.tensor().clone()],
    ))
}

impl Op {
    /// Vector-Jacobian product: gradients for each input given the output
    /// gradient. `None` means the input receives nothing.
    pub(crate) fn vjp(&self, inputs: &[Tensor], out: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        match self {
            Op::Reshape => vec![Some(grad_out.to_vec())],
            Op::Add => vec![Some(grad_out.to_vec()), Some(grad_out.to_vec())],
            Op::Mul => {
                let (a, b) = (inputs[0].values(), inputs[1].values());
                vec![
                    Some(grad_out.iter().zip(b).map(|(g, y)| g * y).collect()),
                    Some(grad_out.iter().zip(a).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale(k) => vec![Some(grad_out.iter().map(|g| g * k).collect())],
            Op::Sum => vec![Some(vec![grad_out[0]; inputs[0].numel()])],
            Op::Mean => {
                let n = inputs[0].numel();
                vec![Some(vec![grad_out[0] / n as f64; n])]
            }
            Op::Relu => vec![Some(
                inputs[0]
                    .values()
                    .iter()
                    .zip(grad_out)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            )],
            Op::Conv2d(g) => {
                let (gi, gw, gb) =
                    kernels::conv2d_backward(g, inputs[0].values(), inputs[1].values(), grad_out);
                vec![Some(gi), Some(gw), Some(gb)]
            }
            Op::Softmax => {
                let shape = out.shape();
                let (b, c) = (shape[0], shape[1]);
                let plane = shape[2] * shape[3];
                let p = out.values();
                let mut gin = vec![0.0; p.len()];
                for bi in 0..b {
                    let base = bi * c * plane;
                    for px in 0..plane {
                        let dot: f64 = (0..c)
                            .map(|ch| grad_out[base + ch * plane + px] * p[base + ch * plane + px])
                            .sum();
                        for ch in 0..c {
                            let i = base + ch * plane + px;
                            gin[i] = p[i] * (grad_out[i] - dot);
                        }
                    }
                }
                vec![Some(gin)]
            }
            Op::CrossEntropy { target, count } => {
                let p = inputs[0].values();
                let scale = grad_out[0] / *count as f64;
                let mut gin = vec![0.0; p.len()];
                match target {
                    CeTarget::Dense(t) => {
                        for ((g, &pv), &tv) in gin.iter_mut().zip(p).zip(t) {
                            if tv != 0.0 && pv > LOG_CLAMP {
                                *g = -scale * tv / pv;
                            }
                        }
                    }
                    CeTarget::Index(idx) => {
                        let shape = inputs[0].shape();
                        let c = shape[1];
                        let plane = shape[2] * shape[3];
                        for (i, cls) in idx.iter().enumerate() {
                            if let Some(cls) = *cls {
                                let j = ((i / plane) * c + cls) * plane + i % plane;
                                if p[j] > LOG_CLAMP {
                                    gin[j] = -scale / p[j];
                                }
                            }
                        }
                    }
                }
                vec![Some(gin)]
            }
        }
    }
}
