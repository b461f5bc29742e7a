use crate::error::{invalid, Error, Result};

use super::tensor::Tensor;

/// Trainable tensor plus its SGD momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    tensor: Tensor,
    momentum_buffer: Vec<f64>,
}

impl Parameter {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Parameter> {
        let tensor = Tensor::leaf(shape, values)?;
        let momentum_buffer = vec![0.0; tensor.numel()];
        Ok(Parameter { tensor, momentum_buffer })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn values(&self) -> &[f64] {
        self.tensor.values()
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn momentum_buffer(&self) -> &[f64] {
        &self.momentum_buffer
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tensor.grad()
    }

    /// Replaces the values with a fresh leaf; the momentum buffer is kept.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        self.tensor = Tensor::leaf(self.tensor.shape(), values)?;
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad();
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One SGD step with momentum and L2 weight decay:
///
/// ```text
/// g   = grad + weight_decay * theta
/// buf = momentum * buf + g
/// theta -= lr * buf
/// ```
///
/// Every parameter must carry a gradient. Gradients are cleared afterwards.
pub fn sgd_step<'a, I>(params: I, cfg: SgdConfig) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Parameter>,
{
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return invalid(format!("learning rate must be positive, got {}", cfg.lr));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return invalid(format!("momentum must lie in [0, 1), got {}", cfg.momentum));
    }
    if cfg.weight_decay.is_nan() || cfg.weight_decay < 0.0 {
        return invalid(format!("weight decay must be nonnegative, got {}", cfg.weight_decay));
    }
    let mut params: Vec<&mut Parameter> = params.into_iter().collect();
    let grads = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.grad().ok_or_else(|| {
                Error::Gradient(format!("parameter {i} (shape {:?}) has no gradient", p.shape()))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for (p, grad) in params.iter_mut().zip(grads) {
        let theta = p.tensor.values();
        let mut next = Vec::with_capacity(theta.len());
        for ((buf, &th), g) in p.momentum_buffer.iter_mut().zip(theta).zip(grad) {
            let g = g + cfg.weight_decay * th;
            *buf = cfg.momentum * *buf + g;
            next.push(th - cfg.lr * *buf);
        }
        p.set_values(next)?;
    }
    Ok(())
}
