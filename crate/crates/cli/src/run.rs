//! Seeded grid runs and their artifacts.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! summary.csv
//! <method>_n<n>_lambda<l>_ratio<r>/history_<seed>.csv
//!                                 best_<seed>.ncps
//!                                 final_<seed>.ncps
//!                                 curve_<seed>.svg
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ncps_core::metrics::format_percent;
use ncps_core::segmodel::NetworkEnsemble;
use ncps_core::synthdata::{generate_dataset, split_supervision};
use ncps_core::trainer::{train, EvalMode, RunHistory};

use crate::config::{ExperimentConfig, GridPoint};
use crate::svg;

pub const HISTORY_HEADER: [&str; 9] =
    ["iter", "lr", "loss_total", "loss_sup", "loss_cps_l", "loss_cps_u", "miou_single", "miou_mc", "miou_sv"];

pub const SUMMARY_HEADER: [&str; 11] = [
    "method",
    "n",
    "lambda",
    "ratio",
    "eval_mode",
    "seed_count",
    "miou_mean",
    "miou_std",
    "miou_min",
    "miou_max",
    "miou_best_step_mean",
];

/// One `summary.csv` row. Scores are fractions in [0, 1]; they are written as
/// percentages with two decimals.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub point: GridPoint,
    pub eval_mode: EvalMode,
    /// Final-step score of each seed.
    pub finals: Vec<f64>,
    /// Best score of each seed over all evaluated steps.
    pub bests: Vec<f64>,
}

impl SummaryRow {
    pub fn mean(&self) -> f64 {
        mean(&self.finals)
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.finals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.finals.len() as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.finals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.finals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn best_step_mean(&self) -> f64 {
        mean(&self.bests)
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.point.method.name().to_string(),
            self.point.n.to_string(),
            self.point.lambda.to_string(),
            self.point.ratio.text.clone(),
            self.eval_mode.name().to_string(),
            self.finals.len().to_string(),
            format_percent(self.mean()),
            format_percent(self.std()),
            format_percent(self.min()),
            format_percent(self.max()),
            format_percent(self.best_step_mean()),
        ]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs every grid point for every seed and writes all artifacts. Returns the
/// summary rows in grid order, eval modes in config order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let dataset = generate_dataset(&cfg.dataset)?;

    let mut rows = Vec::new();
    for point in cfg.grid() {
        let dir = out.join(point.dir_name());
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut histories = Vec::new();
        for seed in cfg.seeds() {
            let split = split_supervision(&dataset.train, point.ratio.value, seed)?;
            let history = train(&cfg.train_config(&point, seed), &split, &dataset.eval)
                .with_context(|| format!("{} seed {seed}", point.dir_name()))?;
            write_run_artifacts(&dir, seed, &history, cfg)?;
            eprintln!(
                "{} seed {seed}: {} {}",
                point.dir_name(),
                cfg.selection_mode().name(),
                format_percent(history.final_miou(cfg.selection_mode()))
            );
            histories.push(history);
        }
        for &mode in &cfg.eval_modes {
            rows.push(SummaryRow {
                point: point.clone(),
                eval_mode: mode,
                finals: histories.iter().map(|h| h.final_miou(mode)).collect(),
                bests: histories.iter().map(|h| h.best_miou(mode)).collect(),
            });
        }
    }
    write_summary(&out.join("summary.csv"), &rows)?;
    Ok(rows)
}

fn write_run_artifacts(dir: &Path, seed: u64, history: &RunHistory, cfg: &ExperimentConfig) -> Result<()> {
    write_history(&dir.join(format!("history_{seed}.csv")), history)?;
    write_checkpoint(&dir.join(format!("best_{seed}.ncps")), &history.best_ensemble)?;
    write_checkpoint(&dir.join(format!("final_{seed}.ncps")), &history.final_ensemble)?;
    if cfg.learning_curve {
        let path = dir.join(format!("curve_{seed}.svg"));
        fs::write(&path, svg::learning_curve(history, &cfg.eval_modes))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_history(path: &Path, history: &RunHistory) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in &history.records {
        w.write_record([
            r.iter.to_string(),
            format!("{:.8}", r.lr),
            format!("{:.8}", r.loss.total),
            format!("{:.8}", r.loss.supervised),
            format!("{:.8}", r.loss.cps_labelled),
            format!("{:.8}", r.loss.cps_unlabelled),
            format_percent(r.eval.miou_single),
            format_percent(r.eval.miou_mc),
            format_percent(r.eval.miou_sv),
        ])?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_checkpoint(path: &PathBuf, ens: &NetworkEnsemble) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut out = BufWriter::new(file);
    ens.write_checkpoint(&mut out)?;
    out.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
