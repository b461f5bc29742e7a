//! Dataset export as binary PPM (pixels) and PGM (label indices).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ncps_core::synthdata::{generate_dataset, DatasetConfig, SynthImage};

/// Writes `<out>/dataset/{train,eval}/img_%05d.ppm` and `lab_%05d.pgm`, named
/// by image id. Returns the dataset directory.
pub fn dump_dataset(cfg: &DatasetConfig, out: &Path) -> Result<PathBuf> {
    let d = generate_dataset(cfg)?;
    let root = out.join("dataset");
    for (name, images) in [("train", &d.train), ("eval", &d.eval)] {
        let dir = root.join(name);
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for img in images.iter() {
            let ppm = dir.join(format!("img_{:05}.ppm", img.id));
            fs::write(&ppm, ppm_bytes(img)).with_context(|| format!("cannot write {}", ppm.display()))?;
            let pgm = dir.join(format!("lab_{:05}.pgm", img.id));
            fs::write(&pgm, pgm_bytes(img)).with_context(|| format!("cannot write {}", pgm.display()))?;
        }
    }
    Ok(root)
}

/// P6, maxval 255, rows top to bottom.
pub fn ppm_bytes(img: &SynthImage) -> Vec<u8> {
    let [_, w, h] = img.labels.shape();
    let v = img.pixels.values();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((v[(c * w + x) * h + y].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

/// P5 holding raw class indices.
pub fn pgm_bytes(img: &SynthImage) -> Vec<u8> {
    let [_, w, h] = img.labels.shape();
    let classes = img.labels.classes();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.push(classes[x * h + y] as u8);
        }
    }
    out
}
