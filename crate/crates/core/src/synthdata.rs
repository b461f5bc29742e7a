//! Deterministic synthetic segmentation scenes, the labelled/unlabelled split
//! and the per-step batch samplers.
//!
//! A scene is a flat background with up to three shapes painted on top. Each
//! non-background class owns one shape kind (1 = rectangle, 2 = disc,
//! 3 = triangle) and one color prototype; fills are jittered around the
//! prototype and the whole image gets clamped Gaussian noise.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{LabelMap, Tensor};
use crate::error::{invalid, Result};
use crate::rng::Stream;

pub const MAX_CLASSES: usize = 4;

/// Color prototypes: background first, then one per shape class.
pub const PALETTE: [[f64; 3]; MAX_CLASSES] = [
    [0.45, 0.45, 0.45],
    [0.68, 0.34, 0.34],
    [0.34, 0.64, 0.40],
    [0.38, 0.40, 0.68],
];

/// Per-channel uniform jitter around each prototype.
pub const COLOR_JITTER: f64 = 0.05;
/// Subtracted from every pixel before it enters a network.
pub const PIXEL_MEAN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    /// Half-open pixel box `[x0, x1) x [y0, y1)`.
    Rect { x0: usize, y0: usize, x1: usize, y1: usize },
    Disc { cx: f64, cy: f64, radius: f64 },
    Triangle { vertices: [(f64, f64); 3] },
}

impl ShapeKind {
    /// Whether the center of pixel (x, y) lies inside the shape.
    pub fn covers(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            ShapeKind::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&x) && (y0..y1).contains(&y),
            ShapeKind::Disc { cx, cy, radius } => (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius,
            ShapeKind::Triangle { vertices: [a, b, c] } => {
                let edge = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (py - p.1) - (q.1 - p.1) * (px - p.0);
                let (d0, d1, d2) = (edge(a, b), edge(b, c), edge(c, a));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRecord {
    pub class: usize,
    pub kind: ShapeKind,
    pub color: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub id: usize,
    /// (3, w, h), values in [0, 1].
    pub pixels: Tensor,
    /// (1, w, h).
    pub labels: LabelMap,
    /// Shapes in draw order; later ones occlude earlier ones.
    pub shapes: Vec<ShapeRecord>,
    pub background: [f64; 3],
}

impl SynthImage {
    /// Network input: pixels shifted by [`PIXEL_MEAN`], same layout.
    pub fn input_values(&self) -> Vec<f64> {
        self.pixels.values().iter().map(|p| p - PIXEL_MEAN).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub num_images: usize,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub noise_std: f64,
    pub min_shapes: usize,
    pub max_shapes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            num_images: 200,
            width: 32,
            height: 32,
            num_classes: 4,
            noise_std: 0.08,
            min_shapes: 1,
            max_shapes: 3,
        }
    }
}

impl DatasetConfig {
    pub fn num_eval_images(&self) -> usize {
        (self.num_images as f64 * 0.2).ceil() as usize
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<SynthImage>,
    pub eval: Vec<SynthImage>,
}

/// Generates `num_images` training scenes plus `ceil(20%)` held-out scenes.
/// Ids run consecutively across both lists; every image has its own derived
/// random stream.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.num_classes < 2 {
        return invalid(format!("need at least 2 classes, got {}", cfg.num_classes));
    }
    if cfg.num_classes > MAX_CLASSES {
        return invalid(format!(
            "{} shape classes requested, only {} shape kinds exist",
            cfg.num_classes - 1,
            MAX_CLASSES - 1
        ));
    }
    if cfg.width < 16 || cfg.height < 16 {
        return invalid(format!("images must be at least 16x16, got {}x{}", cfg.width, cfg.height));
    }
    if cfg.min_shapes > cfg.max_shapes {
        return invalid("min_shapes exceeds max_shapes");
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return invalid(format!("noise std must be nonnegative, got {}", cfg.noise_std));
    }
    let total = cfg.num_images + cfg.num_eval_images();
    let mut images = (0..total).map(|id| generate_image(cfg, id)).collect::<Result<Vec<_>>>()?;
    let eval = images.split_off(cfg.num_images);
    Ok(Dataset { train: images, eval })
}

fn image_rng(seed: u64, id: usize) -> ChaCha8Rng {
    Stream::Dataset.rng(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id as u64)
}

fn jittered(rng: &mut ChaCha8Rng, proto: [f64; 3]) -> [f64; 3] {
    proto.map(|c| c + rng.random_range(-COLOR_JITTER..=COLOR_JITTER))
}

fn sample_shape(rng: &mut ChaCha8Rng, class: usize, w: usize, h: usize) -> ShapeKind {
    let (wf, hf) = (w as f64, h as f64);
    let side = wf.min(hf);
    match class {
        1 => {
            let sx = rng.random_range(w / 5..=w / 2);
            let sy = rng.random_range(h / 5..=h / 2);
            let x0 = rng.random_range(0..=w - sx);
            let y0 = rng.random_range(0..=h - sy);
            ShapeKind::Rect { x0, y0, x1: x0 + sx, y1: y0 + sy }
        }
        2 => {
            let radius = rng.random_range(side / 8.0..=side / 4.0);
            let cx = rng.random_range(radius..=wf - radius);
            let cy = rng.random_range(radius..=hf - radius);
            ShapeKind::Disc { cx, cy, radius }
        }
        _ => {
            let radius = rng.random_range(side / 6.0..=side / 3.0);
            let cx = rng.random_range(radius..=wf - radius);
            let cy = rng.random_range(radius..=hf - radius);
            let start = rng.random_range(0.0..std::f64::consts::TAU);
            let vertices = [0.0, 1.0, 2.0].map(|k: f64| {
                let a = start + k * std::f64::consts::TAU / 3.0;
                (cx + radius * a.cos(), cy + radius * a.sin())
            });
            ShapeKind::Triangle { vertices }
        }
    }
}

fn generate_image(cfg: &DatasetConfig, id: usize) -> Result<SynthImage> {
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = image_rng(cfg.seed, id);
    let background = jittered(&mut rng, PALETTE[0]);

    let max_shapes = cfg.max_shapes.min(cfg.num_classes - 1);
    let count = rng.random_range(cfg.min_shapes.min(max_shapes)..=max_shapes);
    let mut classes: Vec<usize> = (1..cfg.num_classes).collect();
    classes.shuffle(&mut rng);
    let shapes: Vec<ShapeRecord> = classes[..count]
        .iter()
        .map(|&class| {
            let kind = sample_shape(&mut rng, class, w, h);
            let color = jittered(&mut rng, PALETTE[class]);
            ShapeRecord { class, kind, color }
        })
        .collect();

    let plane = w * h;
    let mut pixels = vec![0.0; 3 * plane];
    let mut labels = vec![0; plane];
    for x in 0..w {
        for y in 0..h {
            let top = shapes.iter().rev().find(|s| s.kind.covers(x, y));
            let (class, color) = top.map_or((0, background), |s| (s.class, s.color));
            labels[x * h + y] = class;
            for ch in 0..3 {
                pixels[ch * plane + x * h + y] = color[ch];
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        for v in &mut pixels {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(SynthImage {
        id,
        pixels: Tensor::new(&[3, w, h], pixels)?,
        labels: LabelMap::new([1, w, h], labels)?,
        shapes,
        background,
    })
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub labelled: Vec<SynthImage>,
    /// Labels are present on the images but never read by training.
    pub unlabelled: Vec<SynthImage>,
    pub ratio: f64,
    pub seed: u64,
}

/// Seeded uniform draw without replacement of `max(1, round(ratio * N))`
/// labelled images; the rest become unlabelled. Both lists keep input order.
pub fn split_supervision(images: &[SynthImage], ratio: f64, seed: u64) -> Result<SplitDataset> {
    if images.is_empty() {
        return invalid("cannot split an empty image list");
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return invalid(format!("supervision ratio must lie in (0, 1], got {ratio}"));
    }
    let n = images.len();
    let k = ((ratio * n as f64).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut Stream::Split.rng(seed));
    let chosen: HashSet<usize> = idx[..k].iter().copied().collect();
    let (labelled, unlabelled) = images.iter().enumerate().fold(
        (Vec::with_capacity(k), Vec::with_capacity(n - k)),
        |(mut l, mut u), (i, img)| {
            if chosen.contains(&i) {
                l.push(img.clone());
            } else {
                u.push(img.clone());
            }
            (l, u)
        },
    );
    Ok(SplitDataset { labelled, unlabelled, ratio, seed })
}

/// Endless walk over reshuffled permutations of `0..len`.
#[derive(Clone, Debug)]
pub struct CyclingSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl CyclingSampler {
    pub fn new(len: usize, rng: ChaCha8Rng) -> Result<CyclingSampler> {
        if len == 0 {
            return invalid("sampler over an empty set");
        }
        let mut s = CyclingSampler { order: (0..len).collect(), pos: 0, rng };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    /// Next `k` distinct indices. Each epoch visits every index once before
    /// any repeats; when a draw straddles an epoch boundary, indices already
    /// taken in this draw are pushed later in the new epoch.
    pub fn take(&mut self, k: usize) -> Result<Vec<usize>> {
        if k > self.order.len() {
            return invalid(format!("cannot draw {k} distinct items from {}", self.order.len()));
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            if out.contains(&self.order[self.pos]) {
                let j = (self.pos + 1..self.order.len())
                    .find(|&j| !out.contains(&self.order[j]))
                    .expect("k <= len leaves an unused index in the epoch");
                self.order.swap(self.pos, j);
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct LabelledBatch {
    pub ids: Vec<usize>,
    pub x: Tensor,
    pub gt: LabelMap,
}

#[derive(Clone, Debug)]
pub struct UnlabelledBatch {
    pub ids: Vec<usize>,
    pub x: Tensor,
}

/// Tuple handed to one training step.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub labelled: LabelledBatch,
    pub unlabelled: Vec<UnlabelledBatch>,
}

fn stack_pixels(images: &[&SynthImage]) -> Result<Tensor> {
    let s = images[0].pixels.shape();
    let mut v = Vec::with_capacity(images.len() * images[0].pixels.numel());
    for img in images {
        v.extend(img.input_values());
    }
    Tensor::new(&[images.len(), s[0], s[1], s[2]], v)
}

/// Per-step batch source. Labelled and unlabelled streams draw from separate
/// random streams, so skipping the unlabelled draws leaves the labelled
/// sequence unchanged.
#[derive(Clone, Debug)]
pub struct BatchStream<'a> {
    split: &'a SplitDataset,
    batch_l: usize,
    batch_u: usize,
    unlabelled_batches: usize,
    labelled: CyclingSampler,
    unlabelled: Option<CyclingSampler>,
}

impl<'a> BatchStream<'a> {
    /// `unlabelled_batches` is 0 (supervised only), 1 (plain CPS) or 2 (CutMix);
    /// the batches within one step never share an image.
    pub fn new(
        split: &'a SplitDataset,
        batch_l: usize,
        batch_u: usize,
        unlabelled_batches: usize,
        seed: u64,
    ) -> Result<BatchStream<'a>> {
        if batch_l == 0 || batch_l > split.labelled.len() {
            return invalid(format!(
                "labelled batch of {batch_l} from {} labelled images",
                split.labelled.len()
            ));
        }
        if unlabelled_batches > 2 {
            return invalid(format!("at most two unlabelled batches per step, got {unlabelled_batches}"));
        }
        let unlabelled = if unlabelled_batches > 0 {
            if batch_u == 0 || unlabelled_batches * batch_u > split.unlabelled.len() {
                return invalid(format!(
                    "{unlabelled_batches} disjoint unlabelled batches of {batch_u} from {} unlabelled images",
                    split.unlabelled.len()
                ));
            }
            Some(CyclingSampler::new(split.unlabelled.len(), Stream::UnlabelledOrder.rng(seed))?)
        } else {
            None
        };
        Ok(BatchStream {
            split,
            batch_l,
            batch_u,
            unlabelled_batches,
            labelled: CyclingSampler::new(split.labelled.len(), Stream::LabelledOrder.rng(seed))?,
            unlabelled,
        })
    }

    pub fn next_step(&mut self) -> Result<StepBatch> {
        let li = self.labelled.take(self.batch_l)?;
        let imgs: Vec<&SynthImage> = li.iter().map(|&i| &self.split.labelled[i]).collect();
        let labels: Vec<&LabelMap> = imgs.iter().map(|img| &img.labels).collect();
        let labelled = LabelledBatch {
            ids: imgs.iter().map(|img| img.id).collect(),
            x: stack_pixels(&imgs)?,
            gt: LabelMap::concat(&labels)?,
        };

        let mut unlabelled = Vec::with_capacity(self.unlabelled_batches);
        if let Some(sampler) = self.unlabelled.as_mut() {
            let ui = sampler.take(self.unlabelled_batches * self.batch_u)?;
            for chunk in ui.chunks(self.batch_u) {
                let imgs: Vec<&SynthImage> = chunk.iter().map(|&i| &self.split.unlabelled[i]).collect();
                unlabelled.push(UnlabelledBatch {
                    ids: imgs.iter().map(|img| img.id).collect(),
                    x: stack_pixels(&imgs)?,
                });
            }
        }
        Ok(StepBatch { labelled, unlabelled })
    }
}

/// Stacks the network inputs of `images` into one (b, 3, w, h) tensor plus
/// their (b, w, h) labels.
pub fn stack_images(images: &[SynthImage]) -> Result<(Tensor, LabelMap)> {
    if images.is_empty() {
        return invalid("cannot stack zero images");
    }
    let refs: Vec<&SynthImage> = images.iter().collect();
    let labels: Vec<&LabelMap> = images.iter().map(|i| &i.labels).collect();
    Ok((stack_pixels(&refs)?, LabelMap::concat(&labels)?))
}
