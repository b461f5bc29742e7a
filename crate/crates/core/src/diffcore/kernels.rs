//! Slice-level kernels shared by the differentiable ops and the no-grad
//! inference path.

use crate::error::{shape_err, Result};

/// Geometry of a 2-D cross-correlation with square kernels and equal padding
/// on both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub height: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn from_shapes(input: &[usize], weight: &[usize], padding: usize) -> Result<ConvGeometry> {
        if input.len() != 4 {
            return shape_err(format!("conv2d input must be (b,cin,w,h), got {input:?}"));
        }
        if weight.len() != 4 {
            return shape_err(format!("conv2d weight must be (cout,cin,k,k), got {weight:?}"));
        }
        if weight[2] != weight[3] {
            return shape_err(format!("conv2d kernel must be square, got {weight:?}"));
        }
        if input[1] != weight[1] {
            return shape_err(format!(
                "conv2d channel mismatch: input has {} channels, weight expects {}",
                input[1], weight[1]
            ));
        }
        let g = ConvGeometry {
            batch: input[0],
            in_channels: input[1],
            out_channels: weight[0],
            width: input[2],
            height: input[3],
            kernel: weight[2],
            padding,
        };
        if g.width + 2 * padding < g.kernel || g.height + 2 * padding < g.kernel {
            return shape_err(format!(
                "conv2d kernel {} larger than padded input {}x{}",
                g.kernel, g.width, g.height
            ));
        }
        Ok(g)
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_height(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_width(), self.out_height()]
    }

    /// For kernel offset `k`, the output index range whose source index
    /// `o + k - padding` falls inside `[0, size)`.
    fn valid_range(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(k);
        let hi = (size + self.padding).saturating_sub(k).min(out);
        (lo, hi.max(lo))
    }
}

pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ow, oh) = (g.out_width(), g.out_height());
    let in_plane = g.width * g.height;
    let out_plane = ow * oh;
    let k = g.kernel;
    let mut out = vec![0.0; g.batch * g.out_channels * out_plane];

    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let dst = &mut out[(b * g.out_channels + co) * out_plane..][..out_plane];
            dst.fill(bias[co]);
            for ci in 0..g.in_channels {
                let src = &input[(b * g.in_channels + ci) * in_plane..][..in_plane];
                let wbase = (co * g.in_channels + ci) * k * k;
                for ky in 0..k {
                    let (y0, y1) = g.valid_range(ky, g.width, ow);
                    if y0 == y1 {
                        continue;
                    }
                    for kx in 0..k {
                        let wv = weight[wbase + ky * k + kx];
                        let (x0, x1) = g.valid_range(kx, g.height, oh);
                        if x0 == x1 {
                            continue;
                        }
                        let sx0 = x0 + kx - g.padding;
                        for oy in y0..y1 {
                            let iy = oy + ky - g.padding;
                            let orow = &mut dst[oy * oh + x0..oy * oh + x1];
                            let irow = &src[iy * g.height + sx0..][..x1 - x0];
                            for (o, i) in orow.iter_mut().zip(irow) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a conv2d with respect to input, weight and bias.
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ow, oh) = (g.out_width(), g.out_height());
    let in_plane = g.width * g.height;
    let out_plane = ow * oh;
    let k = g.kernel;
    let mut g_in = vec![0.0; input.len()];
    let mut g_w = vec![0.0; weight.len()];
    let mut g_b = vec![0.0; g.out_channels];

    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let go = &grad_out[(b * g.out_channels + co) * out_plane..][..out_plane];
            g_b[co] += go.iter().sum::<f64>();
            for ci in 0..g.in_channels {
                let src = &input[(b * g.in_channels + ci) * in_plane..][..in_plane];
                let gsrc = &mut g_in[(b * g.in_channels + ci) * in_plane..][..in_plane];
                let wbase = (co * g.in_channels + ci) * k * k;
                for ky in 0..k {
                    let (y0, y1) = g.valid_range(ky, g.width, ow);
                    if y0 == y1 {
                        continue;
                    }
                    for kx in 0..k {
                        let widx = wbase + ky * k + kx;
                        let wv = weight[widx];
                        let (x0, x1) = g.valid_range(kx, g.height, oh);
                        if x0 == x1 {
                            continue;
                        }
                        let sx0 = x0 + kx - g.padding;
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy + ky - g.padding;
                            let grow = &go[oy * oh + x0..oy * oh + x1];
                            let irow = &src[iy * g.height + sx0..][..x1 - x0];
                            let girow = &mut gsrc[iy * g.height + sx0..][..x1 - x0];
                            for ((gi, i), gv) in girow.iter_mut().zip(irow).zip(grow) {
                                *gi += wv * gv;
                                acc += gv * i;
                            }
                        }
                        g_w[widx] += acc;
                    }
                }
            }
        }
    }
    (g_in, g_w, g_b)
}

/// Per-pixel softmax over axis 1 of a (b, c, w, h) array, max-subtracted.
pub fn softmax_channels(shape: &[usize], logits: &[f64]) -> Vec<f64> {
    let (b, c) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    let mut out = vec![0.0; logits.len()];
    for bi in 0..b {
        let base = bi * c * plane;
        for px in 0..plane {
            let idx = |ch: usize| base + ch * plane + px;
            let max = (0..c).map(|ch| logits[idx(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ch in 0..c {
                let e = (logits[idx(ch)] - max).exp();
                out[idx(ch)] = e;
                total += e;
            }
            for ch in 0..c {
                out[idx(ch)] /= total;
            }
        }
    }
    out
}

/// Per-pixel argmax over axis 1 of a (b, c, w, h) array; ties go to the
/// lowest class index. Returns a (b, w, h) class array.
pub fn argmax_channels(shape: &[usize], values: &[f64]) -> Vec<usize> {
    let (b, c) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    let mut out = Vec::with_capacity(b * plane);
    for bi in 0..b {
        let base = bi * c * plane;
        for px in 0..plane {
            let mut best = 0;
            let mut best_v = values[base + px];
            for ch in 1..c {
                let v = values[base + ch * plane + px];
                if v > best_v {
                    best = ch;
                    best_v = v;
                }
            }
            out.push(best);
        }
    }
    out
}
