//! Flat `key = value` experiment files.
//!
//! ```text
//! # 3-CPS against the supervised baseline
//! method = ncps, supervised_only
//! n = 3
//! lambda = 1.5
//! ratio = 1/8
//! eval_modes = single, mc, sv
//! repeats = 5
//! output_dir = runs/table3
//! ```
//!
//! `method`, `n`, `lambda` and `ratio` accept comma-separated lists; the run
//! covers their cartesian product.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ncps_core::synthdata::DatasetConfig;
use ncps_core::trainer::{EvalMode, Method, TrainConfig};

use crate::error::ConfigError;

/// Supervision ratio as written in the file plus its value.
#[derive(Clone, Debug, PartialEq)]
pub struct Ratio {
    pub text: String,
    pub value: f64,
}

impl Ratio {
    pub fn parse(s: &str) -> Option<Ratio> {
        let value = match s.split_once('/') {
            Some((a, b)) => {
                let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
                (b != 0.0).then(|| a / b)?
            }
            None => s.parse().ok()?,
        };
        (value > 0.0 && value <= 1.0).then(|| Ratio { text: s.replace(' ', ""), value })
    }
}

/// One cell of the experiment grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub method: Method,
    pub n: usize,
    pub lambda: f64,
    pub ratio: Ratio,
}

impl GridPoint {
    /// Subdirectory name, e.g. `ncps_n3_lambda1.5_ratio1-8`.
    pub fn dir_name(&self) -> String {
        format!(
            "{}_n{}_lambda{}_ratio{}",
            self.method.name(),
            self.n,
            self.lambda,
            self.ratio.text.replace('/', "-")
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub ns: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub ratios: Vec<Ratio>,
    pub eval_modes: Vec<EvalMode>,
    pub repeats: usize,
    /// Run `r` of every grid point uses seed `seed + r`.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub learning_curve: bool,
    /// Template for every run; grid keys and seeds are filled in per run.
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            methods: vec![train.method],
            ns: vec![train.n],
            lambdas: vec![train.lambda],
            ratios: vec![Ratio { text: "1/8".into(), value: 0.125 }],
            eval_modes: EvalMode::ALL.to_vec(),
            repeats: 1,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            learning_curve: true,
            train,
            dataset: DatasetConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut use_cutmix = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(ConfigError::at(line, format!("`{key}` already set on line {first}")));
            }
            if value.is_empty() {
                return Err(ConfigError::at(line, format!("`{key}` has no value")));
            }
            cfg.set(key, value, &mut use_cutmix).map_err(|msg| ConfigError::at(line, msg))?;
        }
        if use_cutmix {
            cfg.methods.iter_mut().filter(|m| **m == Method::Ncps).for_each(|m| *m = Method::NcpsCutmix);
        }
        cfg.train.num_classes = cfg.dataset.num_classes;
        cfg.validate(&seen)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, use_cutmix: &mut bool) -> Result<(), String> {
        match key {
            "method" => self.methods = list(value, |s| Method::parse(s).ok_or(format!("unknown method `{s}`")))?,
            "n" => {
                self.ns = list(value, |s| match num(s)? {
                    0 => Err("n must be at least 1".to_string()),
                    n => Ok(n),
                })?
            }
            "lambda" => {
                self.lambdas = list(value, |s| {
                    let lambda = num(s)?;
                    TrainConfig { lambda, ..TrainConfig::default() }.validate().map_err(|e| e.to_string())?;
                    Ok(lambda)
                })?
            }
            "ratio" | "supervision_ratio" => {
                self.ratios = list(value, |s| Ratio::parse(s).ok_or(format!("ratio `{s}` is not in (0, 1]")))?
            }
            "eval_modes" => {
                self.eval_modes = list(value, |s| EvalMode::parse(s).ok_or(format!("unknown eval mode `{s}`")))?
            }
            "repeats" => self.repeats = num(value)?,
            "seed" => self.seed = num(value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "learning_curve" => self.learning_curve = boolean(value)?,
            "use_cutmix" => *use_cutmix = boolean(value)?,
            "base_lr" => self.train_field(value, |c, v| c.base_lr = v)?,
            "momentum" => self.train_field(value, |c, v| c.momentum = v)?,
            "weight_decay" => self.train_field(value, |c, v| c.weight_decay = v)?,
            "max_iter" => self.train_field(value, |c, v| c.max_iter = v)?,
            "batch_size_labelled" => self.train_field(value, |c, v| c.batch_size_labelled = v)?,
            "batch_size_unlabelled" => self.train_field(value, |c, v| c.batch_size_unlabelled = v)?,
            "cutmix_area_fraction" => self.train_field(value, |c, v| c.cutmix_area_fraction = v)?,
            "eval_every" => self.train_field(value, |c, v| c.eval_every = v)?,
            "lambda_rampup" => self.train_field(value, |c, v| c.lambda_rampup = v)?,
            "ignore_index" => self.train_field(value, |c, v| c.ignore_index = Some(v))?,
            "dataset_seed" => self.dataset.seed = num(value)?,
            "num_images" => self.dataset.num_images = num(value)?,
            "width" => self.dataset.width = num(value)?,
            "height" => self.dataset.height = num(value)?,
            "num_classes" => self.dataset.num_classes = num(value)?,
            "noise_std" => self.dataset.noise_std = num(value)?,
            "min_shapes" => self.dataset.min_shapes = num(value)?,
            "max_shapes" => self.dataset.max_shapes = num(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses `value`, checks it against an otherwise default training
    /// config, then stores it.
    fn train_field<T: std::str::FromStr + Copy>(
        &mut self,
        value: &str,
        apply: impl Fn(&mut TrainConfig, T),
    ) -> Result<(), String> {
        let v = num(value)?;
        let mut probe = TrainConfig::default();
        apply(&mut probe, v);
        probe.validate().map_err(|e| e.to_string())?;
        apply(&mut self.train, v);
        Ok(())
    }

    fn validate(&self, lines: &HashMap<String, usize>) -> Result<(), ConfigError> {
        let fail = |key: &str, msg: String| match lines.get(key) {
            Some(&line) => ConfigError::at(line, msg),
            None => ConfigError::Invalid(msg),
        };
        if self.repeats == 0 {
            return Err(fail("repeats", "repeats must be at least 1".into()));
        }
        if self.eval_modes.is_empty() {
            return Err(fail("eval_modes", "no eval modes".into()));
        }
        let d = &self.dataset;
        if !(2..=ncps_core::synthdata::MAX_CLASSES).contains(&d.num_classes) {
            return Err(fail("num_classes", format!("num_classes must lie in 2..=4, got {}", d.num_classes)));
        }
        if d.width < 16 || d.height < 16 {
            let key = if d.width < 16 { "width" } else { "height" };
            return Err(fail(key, format!("images must be at least 16x16, got {}x{}", d.width, d.height)));
        }
        if !(d.noise_std >= 0.0 && d.noise_std.is_finite()) {
            return Err(fail("noise_std", format!("noise_std must be nonnegative, got {}", d.noise_std)));
        }
        if d.min_shapes > d.max_shapes {
            return Err(fail("min_shapes", "min_shapes exceeds max_shapes".into()));
        }
        for point in self.grid() {
            let cfg = self.train_config(&point, self.seed);
            if let Err(e) = cfg.validate() {
                let key = if lines.contains_key("n") { "n" } else { "method" };
                return Err(fail(key, format!("{}: {e}", point.dir_name())));
            }
            let labelled = ((point.ratio.value * d.num_images as f64).round() as usize).clamp(1, d.num_images);
            if cfg.batch_size_labelled > labelled {
                return Err(fail(
                    "batch_size_labelled",
                    format!("{}: labelled batch of {} from {labelled} labelled images", point.dir_name(), cfg.batch_size_labelled),
                ));
            }
            let needed = point.method.unlabelled_batches() * cfg.batch_size_unlabelled;
            if needed > d.num_images - labelled {
                return Err(fail(
                    "batch_size_unlabelled",
                    format!("{}: {needed} unlabelled images per step from {}", point.dir_name(), d.num_images - labelled),
                ));
            }
        }
        Ok(())
    }

    /// Grid points in file order. `supervised_only` appears once per (n, ratio)
    /// with lambda 0, whatever the lambda list holds.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut points: Vec<GridPoint> = Vec::new();
        for &method in &self.methods {
            for &n in &self.ns {
                for &lambda in &self.lambdas {
                    for ratio in &self.ratios {
                        let lambda = if method == Method::SupervisedOnly { 0.0 } else { lambda };
                        let p = GridPoint { method, n, lambda, ratio: ratio.clone() };
                        if !points.contains(&p) {
                            points.push(p);
                        }
                    }
                }
            }
        }
        points
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeats as u64).map(move |r| self.seed + r)
    }

    /// Mode that picks the best-step checkpoint: sv when listed, otherwise the
    /// first listed mode.
    pub fn selection_mode(&self) -> EvalMode {
        if self.eval_modes.contains(&EvalMode::Sv) {
            EvalMode::Sv
        } else {
            self.eval_modes[0]
        }
    }

    pub fn train_config(&self, point: &GridPoint, seed: u64) -> TrainConfig {
        TrainConfig {
            n: point.n,
            lambda: point.lambda,
            method: point.method,
            supervision_ratio: point.ratio.value,
            run_seed: seed,
            selection_mode: self.selection_mode(),
            ..self.train.clone()
        }
    }
}

fn list<T>(value: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    value.split(',').map(|s| parse(s.trim())).collect()
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("`{s}` is not a valid number here"))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}
