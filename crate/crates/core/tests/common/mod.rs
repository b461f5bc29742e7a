#![allow(dead_code)]

use ncps_core::diffcore::{ProbMap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random channel-normalized map of shape (b, c, w, h).
pub fn random_probs(rng: &mut impl Rng, shape: [usize; 4]) -> ProbMap {
    let [b, c, w, h] = shape;
    let plane = w * h;
    let mut v = uniform_vec(rng, b * c * plane, 0.01, 1.0);
    for bi in 0..b {
        for px in 0..plane {
            let idx = |k: usize| (bi * c + k) * plane + px;
            let s: f64 = (0..c).map(|k| v[idx(k)]).sum();
            (0..c).for_each(|k| v[idx(k)] /= s);
        }
    }
    ProbMap::from_tensor(Tensor::new(&shape, v).unwrap()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Flat index of element (b, c, x, y) in a (B, C, W, H) row-major array.
pub fn at(shape: &[usize], b: usize, c: usize, x: usize, y: usize) -> usize {
    ((b * shape[1] + c) * shape[2] + x) * shape[3] + y
}
