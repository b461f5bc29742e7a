//! One-hot pseudo-labels (`pmax`) and the CutMix machinery: mask sampling,
//! image mixing, and mask-composed pseudo-labels.

use rand::Rng;

use crate::diffcore::kernels::argmax_channels;
use crate::diffcore::{CeTargetRef, ProbMap, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Per-pixel one-hot map of shape (b, C, w, h). Always detached.
#[derive(Clone, Debug)]
pub struct PseudoLabelMap(Tensor);

impl PseudoLabelMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn as_target(&self) -> CeTargetRef<'_> {
        CeTargetRef::OneHot(&self.0)
    }

    /// Class index per pixel, (b, w, h) order.
    pub fn classes(&self) -> Vec<usize> {
        argmax_channels(self.0.shape(), self.0.values())
    }
}

fn one_hot(shape: &[usize], classes: &[usize]) -> PseudoLabelMap {
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let mut v = vec![0.0; shape.iter().product()];
    for (i, &cls) in classes.iter().enumerate() {
        v[((i / plane) * c + cls) * plane + i % plane] = 1.0;
    }
    PseudoLabelMap(Tensor::new(shape, v).expect("one-hot shape matches"))
}

/// One-hot encoding of the most probable class per pixel (ties toward the
/// lowest class index). The result carries no gradient back to `p`.
pub fn pmax(p: &ProbMap) -> PseudoLabelMap {
    one_hot(p.shape(), &argmax_channels(p.shape(), p.values()))
}

/// Axis-aligned rectangle, half-open: rows `x0..x1` on the width axis,
/// columns `y0..y1` on the height axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Binary (b, 1, w, h) mask with one pasted rectangle per image.
#[derive(Clone, Debug)]
pub struct CutMixMask {
    mask: Tensor,
    rects: Vec<Rect>,
}

impl CutMixMask {
    /// Mask built from explicit rectangles. Empty rectangles give an all-zero
    /// image mask.
    pub fn from_rects(w: usize, h: usize, rects: Vec<Rect>) -> Result<CutMixMask> {
        if rects.is_empty() {
            return invalid("mask needs at least one image");
        }
        let mut v = vec![0.0; rects.len() * w * h];
        for (b, r) in rects.iter().enumerate() {
            if r.x0 > r.x1 || r.y0 > r.y1 || r.x1 > w || r.y1 > h {
                return invalid(format!("rectangle {r:?} outside {w}x{h} image"));
            }
            for x in r.x0..r.x1 {
                v[b * w * h + x * h + r.y0..b * w * h + x * h + r.y1].fill(1.0);
            }
        }
        Ok(CutMixMask { mask: Tensor::new(&[rects.len(), 1, w, h], v)?, rects })
    }

    pub fn zeros(b: usize, w: usize, h: usize) -> Result<CutMixMask> {
        Self::from_rects(w, h, vec![Rect { x0: 0, y0: 0, x1: 0, y1: 0 }; b])
    }

    pub fn ones(b: usize, w: usize, h: usize) -> Result<CutMixMask> {
        Self::from_rects(w, h, vec![Rect { x0: 0, y0: 0, x1: w, y1: h }; b])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        self.mask.values()
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.mask.shape();
        (s[0], s[2], s[3])
    }
}

/// Draws one rectangle per image with area `area_fraction * w * h` up to one
/// row or column, with a random aspect ratio and a uniformly random position.
pub fn sample_cutmix_mask<R: Rng + ?Sized>(
    rng: &mut R,
    b: usize,
    w: usize,
    h: usize,
    area_fraction: f64,
) -> Result<CutMixMask> {
    if !(area_fraction > 0.0 && area_fraction < 1.0) {
        return invalid(format!("area fraction must lie in (0, 1), got {area_fraction}"));
    }
    if b == 0 || w == 0 || h == 0 {
        return invalid(format!("empty mask shape ({b}, 1, {w}, {h})"));
    }
    let target = area_fraction * (w * h) as f64;
    if target.floor() < 1.0 {
        return invalid(format!("rectangle of area {target:.3} is smaller than one pixel"));
    }
    let rows_min = ((target / h as f64).ceil() as usize).max(1);
    let rows_max = (target.floor() as usize).min(w);
    if rows_min > rows_max {
        return invalid(format!("no rectangle of area {target:.3} fits in {w}x{h}"));
    }
    let rects = (0..b)
        .map(|_| {
            let rows = rng.random_range(rows_min..=rows_max);
            let cols = ((target / rows as f64).round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..=w - rows);
            let y0 = rng.random_range(0..=h - cols);
            Rect { x0, y0, x1: x0 + rows, y1: y0 + cols }
        })
        .collect();
    CutMixMask::from_rects(w, h, rects)
}

fn check_mask_fits(shape: &[usize], m: &CutMixMask) -> Result<()> {
    let (b, w, h) = m.dims();
    if shape.len() != 4 || shape[0] != b || shape[2] != w || shape[3] != h {
        return shape_err(format!("mask ({b},1,{w},{h}) does not broadcast over {shape:?}"));
    }
    Ok(())
}

/// Elementwise `v1 * (1 - M) + v2 * M`, with M broadcast over channels.
fn compose(shape: &[usize], v1: &[f64], v2: &[f64], m: &CutMixMask) -> Vec<f64> {
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let mask = m.values();
    v1.iter()
        .zip(v2)
        .enumerate()
        .map(|(i, (&a, &b))| {
            let mv = mask[(i / (c * plane)) * plane + i % plane];
            (1.0 - mv) * a + mv * b
        })
        .collect()
}

/// `(1 - M) * x1 + M * x2`.
pub fn cutmix(x1: &Tensor, x2: &Tensor, m: &CutMixMask) -> Result<Tensor> {
    if x1.shape() != x2.shape() {
        return shape_err(format!("cutmix inputs differ: {:?} vs {:?}", x1.shape(), x2.shape()));
    }
    check_mask_fits(x1.shape(), m)?;
    Tensor::new(x1.shape(), compose(x1.shape(), x1.values(), x2.values(), m))
}

/// `pmax(P1 * (1 - M) + P2 * M)` for one network's predictions on the two
/// unlabelled sub-batches.
pub fn mixed_pseudo_label(p1: &ProbMap, p2: &ProbMap, m: &CutMixMask) -> Result<PseudoLabelMap> {
    if p1.shape() != p2.shape() {
        return shape_err(format!("probability maps differ: {:?} vs {:?}", p1.shape(), p2.shape()));
    }
    check_mask_fits(p1.shape(), m)?;
    let mixed = compose(p1.shape(), p1.values(), p2.values(), m);
    Ok(one_hot(p1.shape(), &argmax_channels(p1.shape(), &mixed)))
}
