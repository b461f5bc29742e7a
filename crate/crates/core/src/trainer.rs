//! Training: the plain n-network CPS step, the CutMix step, a supervised-only
//! step for ablations, the poly learning-rate schedule, and the run loop with
//! periodic evaluation.

use rand::Rng;
use rayon::prelude::*;

use crate::diffcore::{sgd_step, LabelMap, SgdConfig, Tensor};
use crate::ensemble::{decode_single, ensemble_mc, ensemble_sv, EnsembleStack};
use crate::error::{invalid, Result};
use crate::losses::{cps_loss, supervised_loss, total_loss, LossBreakdown};
use crate::metrics::ConfusionMatrix;
use crate::pseudo::{cutmix, mixed_pseudo_label, pmax, sample_cutmix_mask, CutMixMask};
use crate::rng::Stream;
use crate::segmodel::NetworkEnsemble;
use crate::synthdata::{BatchStream, SplitDataset, SynthImage};

/// Input channels of the synthetic RGB images.
pub const IN_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// n networks cross-supervising on labelled and unlabelled batches.
    Ncps,
    /// n networks cross-supervising on CutMix-ed unlabelled batches only.
    NcpsCutmix,
    /// n independently trained networks; no CPS term, no unlabelled data.
    SupervisedOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ncps => "ncps",
            Method::NcpsCutmix => "ncps_cutmix",
            Method::SupervisedOnly => "supervised_only",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "ncps" => Some(Method::Ncps),
            "ncps_cutmix" => Some(Method::NcpsCutmix),
            "supervised_only" => Some(Method::SupervisedOnly),
            _ => None,
        }
    }

    pub fn unlabelled_batches(self) -> usize {
        match self {
            Method::Ncps => 1,
            Method::NcpsCutmix => 2,
            Method::SupervisedOnly => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalMode {
    /// First network only.
    Single,
    /// Max confidence.
    Mc,
    /// Soft voting.
    Sv,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::Single, EvalMode::Mc, EvalMode::Sv];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Single => "single",
            EvalMode::Mc => "mc",
            EvalMode::Sv => "sv",
        }
    }

    pub fn parse(s: &str) -> Option<EvalMode> {
        EvalMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub lambda: f64,
    /// Steps over which the CPS weight rises linearly from 0 to `lambda`;
    /// 0 applies the full weight from the first step. Randomly initialized
    /// networks otherwise agree on a single class before learning anything.
    pub lambda_rampup: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iter: usize,
    pub batch_size_labelled: usize,
    pub batch_size_unlabelled: usize,
    pub method: Method,
    pub cutmix_area_fraction: f64,
    pub supervision_ratio: f64,
    pub run_seed: u64,
    pub num_classes: usize,
    pub eval_every: usize,
    pub ignore_index: Option<usize>,
    /// Mode whose score picks the best-step checkpoint.
    pub selection_mode: EvalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 3,
            lambda: 1.5,
            lambda_rampup: 500,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0005,
            max_iter: 2000,
            batch_size_labelled: 2,
            batch_size_unlabelled: 2,
            method: Method::Ncps,
            cutmix_area_fraction: 0.5,
            supervision_ratio: 1.0 / 8.0,
            run_seed: 0,
            num_classes: 4,
            eval_every: 100,
            ignore_index: None,
            selection_mode: EvalMode::Sv,
        }
    }
}

impl TrainConfig {
    pub fn use_cutmix(&self) -> bool {
        self.method == Method::NcpsCutmix
    }

    pub fn validate(&self) -> Result<()> {
        let min_n = if self.method == Method::SupervisedOnly { 1 } else { 2 };
        if self.n < min_n {
            return invalid(format!("{} needs n >= {min_n}, got {}", self.method.name(), self.n));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return invalid(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return invalid(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size_labelled == 0 || self.batch_size_unlabelled == 0 {
            return invalid("batch sizes must be positive");
        }
        if !(self.cutmix_area_fraction > 0.0 && self.cutmix_area_fraction < 1.0) {
            return invalid(format!("cutmix_area_fraction must lie in (0, 1), got {}", self.cutmix_area_fraction));
        }
        if !(self.supervision_ratio > 0.0 && self.supervision_ratio <= 1.0) {
            return invalid(format!("supervision ratio must lie in (0, 1], got {}", self.supervision_ratio));
        }
        if self.num_classes < 2 {
            return invalid("num_classes must be at least 2");
        }
        if self.eval_every == 0 {
            return invalid("eval_every must be positive");
        }
        Ok(())
    }

    /// CPS weight in effect at step `iter`.
    pub fn lambda_at(&self, iter: usize) -> f64 {
        if iter >= self.lambda_rampup {
            self.lambda
        } else {
            self.lambda * iter as f64 / self.lambda_rampup as f64
        }
    }

    fn sgd(&self, iter: usize) -> Result<SgdConfig> {
        Ok(SgdConfig {
            lr: poly_lr(self.base_lr, iter, self.max_iter)?,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        })
    }
}

/// Per-step accounting of network evaluations and pair-loop iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub forward_calls: usize,
    pub pair_iterations: usize,
    pub iter: usize,
}

/// `base_lr * (1 - iter / max_iter)^0.9`.
pub fn poly_lr(base_lr: f64, iter: usize, max_iter: usize) -> Result<f64> {
    if max_iter == 0 {
        return invalid("poly schedule needs max_iter >= 1");
    }
    if iter > max_iter {
        return invalid(format!("iteration {iter} past max_iter {max_iter}"));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(0.9))
}

/// Total loss of one step with its graph still attached, before backward.
pub struct Objective {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    pub counters: StepCounters,
}

fn breakdown(total: &Tensor, sup: &Tensor, cps_l: &Tensor, cps_u: &Tensor, lambda: f64, n: usize) -> Result<LossBreakdown> {
    Ok(LossBreakdown {
        supervised: sup.item()?,
        cps_labelled: cps_l.item()?,
        cps_unlabelled: cps_u.item()?,
        total: total.item()?,
        lambda,
        n,
    })
}

fn require_cps(ens: &NetworkEnsemble) -> Result<()> {
    if ens.len() < 2 {
        return invalid(format!("cross pseudo supervision needs n >= 2, got {}", ens.len()));
    }
    Ok(())
}

/// Loss of one plain n-CPS step: supervised loss on the labelled batch plus
/// CPS on both the labelled and the unlabelled batch.
pub fn ncps_objective(ens: &NetworkEnsemble, x_l: &Tensor, gt: &LabelMap, x_u: &Tensor, cfg: &TrainConfig) -> Result<Objective> {
    require_cps(ens)?;
    let mut counters = StepCounters::default();
    let p_l = ens.forward_all(x_l, &mut counters)?;
    let p_u = ens.forward_all(x_u, &mut counters)?;

    let y_l: Vec<_> = p_l.iter().map(pmax).collect();
    let y_u: Vec<_> = p_u.iter().map(pmax).collect();
    let cps_u = cps_loss(&p_u, &y_u)?;
    let cps_l = cps_loss(&p_l, &y_l)?;
    debug_assert_eq!(cps_l.pair_iterations, cps_u.pair_iterations);
    // both CPS terms are accumulated in the same pair loop
    counters.pair_iterations = cps_u.pair_iterations;

    let sup = supervised_loss(&p_l, gt, cfg.ignore_index)?;
    let total = total_loss(&sup, &cps_l.loss, &cps_u.loss, cfg.lambda)?;
    let breakdown = breakdown(&total, &sup, &cps_l.loss, &cps_u.loss, cfg.lambda, ens.len())?;
    Ok(Objective { total, breakdown, counters })
}

/// Loss of one n-CPS+CutMix step for a given mask. CPS runs only on the mixed
/// batch, against pseudo-labels composed from the two unlabelled batches.
pub fn cutmix_objective(
    ens: &NetworkEnsemble,
    x_l: &Tensor,
    gt: &LabelMap,
    x_u1: &Tensor,
    x_u2: &Tensor,
    mask: &CutMixMask,
    cfg: &TrainConfig,
) -> Result<Objective> {
    require_cps(ens)?;
    let x_m = cutmix(x_u1, x_u2, mask)?;
    let mut counters = StepCounters::default();
    let p_l = ens.forward_all(x_l, &mut counters)?;
    let p_m = ens.forward_all(&x_m, &mut counters)?;
    let p_u1 = ens.forward_all(x_u1, &mut counters)?;
    let p_u2 = ens.forward_all(x_u2, &mut counters)?;

    let y_mixed = p_u1
        .iter()
        .zip(&p_u2)
        .map(|(a, b)| mixed_pseudo_label(a, b, mask))
        .collect::<Result<Vec<_>>>()?;
    let cps_u = cps_loss(&p_m, &y_mixed)?;
    counters.pair_iterations = cps_u.pair_iterations;

    let sup = supervised_loss(&p_l, gt, cfg.ignore_index)?;
    let cps_l = Tensor::scalar(0.0);
    let total = total_loss(&sup, &cps_l, &cps_u.loss, cfg.lambda)?;
    let breakdown = breakdown(&total, &sup, &cps_l, &cps_u.loss, cfg.lambda, ens.len())?;
    Ok(Objective { total, breakdown, counters })
}

/// Sum of per-network supervised losses; no unlabelled data involved.
pub fn supervised_objective(ens: &NetworkEnsemble, x_l: &Tensor, gt: &LabelMap, cfg: &TrainConfig) -> Result<Objective> {
    let mut counters = StepCounters::default();
    let p_l = ens.forward_all(x_l, &mut counters)?;
    let sup = supervised_loss(&p_l, gt, cfg.ignore_index)?;
    let zero = Tensor::scalar(0.0);
    let breakdown = breakdown(&sup, &sup, &zero, &zero, 0.0, ens.len())?;
    Ok(Objective { total: sup, breakdown, counters })
}

/// Backward from the objective and one SGD step at the poly rate for `iter`.
pub fn apply_objective(ens: &mut NetworkEnsemble, objective: Objective, cfg: &TrainConfig, iter: usize) -> Result<(LossBreakdown, StepCounters)> {
    let sgd = cfg.sgd(iter)?;
    ens.zero_grad();
    objective.total.backward()?;
    sgd_step(ens.parameters_mut(), sgd)?;
    let mut counters = objective.counters;
    counters.iter = iter;
    Ok((objective.breakdown, counters))
}

pub fn train_step_ncps(
    ens: &mut NetworkEnsemble,
    x_l: &Tensor,
    gt: &LabelMap,
    x_u: &Tensor,
    cfg: &TrainConfig,
    iter: usize,
) -> Result<(LossBreakdown, StepCounters)> {
    let objective = ncps_objective(ens, x_l, gt, x_u, cfg)?;
    apply_objective(ens, objective, cfg, iter)
}

/// Draws the batch-wide mask from `rng`, then steps like [`cutmix_objective`].
#[allow(clippy::too_many_arguments)]
pub fn train_step_cutmix<R: Rng + ?Sized>(
    ens: &mut NetworkEnsemble,
    x_l: &Tensor,
    gt: &LabelMap,
    x_u1: &Tensor,
    x_u2: &Tensor,
    cfg: &TrainConfig,
    iter: usize,
    rng: &mut R,
) -> Result<(LossBreakdown, StepCounters)> {
    let s = x_u1.shape();
    let mask = sample_cutmix_mask(rng, s[0], s[2], s[3], cfg.cutmix_area_fraction)?;
    let objective = cutmix_objective(ens, x_l, gt, x_u1, x_u2, &mask, cfg)?;
    apply_objective(ens, objective, cfg, iter)
}

pub fn train_step_supervised(
    ens: &mut NetworkEnsemble,
    x_l: &Tensor,
    gt: &LabelMap,
    cfg: &TrainConfig,
    iter: usize,
) -> Result<(LossBreakdown, StepCounters)> {
    let objective = supervised_objective(ens, x_l, gt, cfg)?;
    apply_objective(ens, objective, cfg, iter)
}

/// mIoU of each inference mode on one evaluation pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub miou_single: f64,
    pub miou_mc: f64,
    pub miou_sv: f64,
}

impl EvalRecord {
    pub fn get(&self, mode: EvalMode) -> f64 {
        match mode {
            EvalMode::Single => self.miou_single,
            EvalMode::Mc => self.miou_mc,
            EvalMode::Sv => self.miou_sv,
        }
    }
}

/// Confusion matrices of the three inference modes over `images`. Images are
/// scored independently, so the pass runs on the current rayon pool.
pub fn evaluate_confusion(ens: &NetworkEnsemble, images: &[SynthImage], ignore_index: Option<usize>) -> Result<[ConfusionMatrix; 3]> {
    let c = ens.num_classes();
    let empty = || [ConfusionMatrix::new(c), ConfusionMatrix::new(c), ConfusionMatrix::new(c)];
    images
        .par_iter()
        .map(|img| -> Result<[ConfusionMatrix; 3]> {
            let s = img.pixels.shape();
            let shape = [1, s[0], s[1], s[2]];
            let input = img.input_values();
            let slices = ens
                .nets()
                .iter()
                .map(|net| net.predict_probs(&shape, &input))
                .collect::<Result<Vec<_>>>()?;
            let stack = EnsembleStack::from_raw(&[1, c, s[1], s[2]], slices)?;
            let mut cms = empty();
            cms[0].accumulate(&decode_single(&stack, 0)?, &img.labels, ignore_index)?;
            cms[1].accumulate(&ensemble_mc(&stack), &img.labels, ignore_index)?;
            cms[2].accumulate(&ensemble_sv(&stack), &img.labels, ignore_index)?;
            Ok(cms)
        })
        .try_reduce(empty, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge(y)?;
            }
            Ok(a)
        })
}

pub fn evaluate(ens: &NetworkEnsemble, images: &[SynthImage], ignore_index: Option<usize>) -> Result<EvalRecord> {
    let [single, mc, sv] = evaluate_confusion(ens, images, ignore_index)?;
    Ok(EvalRecord { miou_single: single.miou()?, miou_mc: mc.miou()?, miou_sv: sv.miou()? })
}

/// One evaluated step of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    /// Number of optimizer steps completed.
    pub iter: usize,
    /// Learning rate used by the last of those steps.
    pub lr: f64,
    pub loss: LossBreakdown,
    pub eval: EvalRecord,
}

#[derive(Clone, Debug)]
pub struct RunHistory {
    /// Evaluation of the freshly initialized networks.
    pub initial: EvalRecord,
    pub records: Vec<HistoryRecord>,
    pub final_ensemble: NetworkEnsemble,
    /// Networks at the step with the highest `selection_mode` score.
    pub best_ensemble: NetworkEnsemble,
    pub best_iter: usize,
}

impl RunHistory {
    fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        std::iter::once(&self.initial).chain(self.records.iter().map(|r| &r.eval))
    }

    pub fn final_miou(&self, mode: EvalMode) -> f64 {
        self.records.last().map_or(&self.initial, |r| &r.eval).get(mode)
    }

    /// Highest score of `mode` over all evaluated steps.
    pub fn best_miou(&self, mode: EvalMode) -> f64 {
        self.evals().map(|e| e.get(mode)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs `max_iter` steps of the configured method on `split`, evaluating on
/// `eval` every `eval_every` steps and after the last step.
pub fn train(cfg: &TrainConfig, split: &SplitDataset, eval: &[SynthImage]) -> Result<RunHistory> {
    cfg.validate()?;
    let mut ens = NetworkEnsemble::init(cfg.run_seed, cfg.n, IN_CHANNELS, cfg.num_classes)?;
    let initial = evaluate(&ens, eval, cfg.ignore_index)?;
    let mut best_ensemble = ens.clone();
    let mut best_score = initial.get(cfg.selection_mode);
    let mut best_iter = 0;
    let mut records = Vec::new();
    if cfg.max_iter == 0 {
        return Ok(RunHistory { initial, records, final_ensemble: ens, best_ensemble, best_iter });
    }

    let mut batches = BatchStream::new(
        split,
        cfg.batch_size_labelled,
        cfg.batch_size_unlabelled,
        cfg.method.unlabelled_batches(),
        cfg.run_seed,
    )?;
    let mut mask_rng = Stream::Mask.rng(cfg.run_seed);

    for iter in 0..cfg.max_iter {
        let step = batches.next_step()?;
        let (x_l, gt) = (&step.labelled.x, &step.labelled.gt);
        let step_cfg = TrainConfig { lambda: cfg.lambda_at(iter), ..cfg.clone() };
        let cfg = &step_cfg;
        let (loss, _) = match cfg.method {
            Method::Ncps => train_step_ncps(&mut ens, x_l, gt, &step.unlabelled[0].x, cfg, iter)?,
            Method::NcpsCutmix => train_step_cutmix(
                &mut ens,
                x_l,
                gt,
                &step.unlabelled[0].x,
                &step.unlabelled[1].x,
                cfg,
                iter,
                &mut mask_rng,
            )?,
            Method::SupervisedOnly => train_step_supervised(&mut ens, x_l, gt, cfg, iter)?,
        };

        let done = iter + 1;
        if done % cfg.eval_every == 0 || done == cfg.max_iter {
            let eval = evaluate(&ens, eval, cfg.ignore_index)?;
            let score = eval.get(cfg.selection_mode);
            if score > best_score {
                best_score = score;
                best_iter = done;
                best_ensemble = ens.clone();
            }
            records.push(HistoryRecord { iter: done, lr: poly_lr(cfg.base_lr, iter, cfg.max_iter)?, loss, eval });
        }
    }
    Ok(RunHistory { initial, records, final_ensemble: ens, best_ensemble, best_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_ramp_points() {
        let cfg = TrainConfig { lambda: 1.5, lambda_rampup: 500, ..TrainConfig::default() };
        assert_eq!(cfg.lambda_at(0), 0.0);
        assert_eq!(cfg.lambda_at(250), 0.75);
        assert_eq!(cfg.lambda_at(500), 1.5);
        assert_eq!(cfg.lambda_at(1999), 1.5);
        let flat = TrainConfig { lambda_rampup: 0, ..cfg };
        assert_eq!(flat.lambda_at(0), 1.5);
    }

    #[test]
    fn poly_schedule_points() {
        assert_eq!(poly_lr(0.01, 0, 100).unwrap(), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100).unwrap(), 0.0);
        let mid = poly_lr(1.0, 50, 100).unwrap();
        assert!((mid - 0.5f64.powf(0.9)).abs() < 1e-12);
        assert!((mid - 0.535887).abs() < 1e-6);
        assert!(poly_lr(0.01, 101, 100).is_err());
        assert!(poly_lr(0.01, 0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { n: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { n: 1, method: Method::SupervisedOnly, ..TrainConfig::default() }.validate().is_ok());
        assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { supervision_ratio: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { eval_every: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for m in [Method::Ncps, Method::NcpsCutmix, Method::SupervisedOnly] {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        for m in EvalMode::ALL {
            assert_eq!(EvalMode::parse(m.name()), Some(m));
        }
    }
}
