//! Supervised, cross-pseudo-supervision and total losses.

use crate::diffcore::{add_all, cross_entropy_mean, CeTargetRef, LabelMap, ProbMap, Tensor};
use crate::error::{invalid, shape_err, Result};
use crate::pseudo::PseudoLabelMap;

/// Scalar values of one step's loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub cps_labelled: f64,
    pub cps_unlabelled: f64,
    pub total: f64,
    pub lambda: f64,
    pub n: usize,
}

/// `sum_j CE(P_j, Y*)`. Summed over networks, not averaged.
pub fn supervised_loss(probs: &[ProbMap], gt: &LabelMap, ignore_index: Option<usize>) -> Result<Tensor> {
    if probs.is_empty() {
        return invalid("supervised loss over zero networks");
    }
    let terms = probs
        .iter()
        .map(|p| cross_entropy_mean(p, CeTargetRef::Labels(gt), ignore_index))
        .collect::<Result<Vec<_>>>()?;
    add_all(&terms)
}

/// CPS loss together with its pair accounting.
#[derive(Clone, Debug)]
pub struct CpsLoss {
    pub loss: Tensor,
    /// Unordered pairs visited, `C(n, 2)`.
    pub pair_iterations: usize,
    /// Cross-entropy terms accumulated, `n (n - 1)`.
    pub terms: usize,
}

/// `1/(n-1) * sum_{j != k} CE(P_j, Y_k)`, accumulated one unordered pair at a
/// time with both directions added per pair.
pub fn cps_loss(probs: &[ProbMap], pseudo: &[PseudoLabelMap]) -> Result<CpsLoss> {
    let n = probs.len();
    if n < 2 {
        return invalid(format!("CPS needs at least 2 networks, got {n}"));
    }
    if pseudo.len() != n {
        return invalid(format!("{n} probability maps but {} pseudo-label maps", pseudo.len()));
    }
    for (p, y) in probs.iter().zip(pseudo) {
        if p.shape() != y.shape() {
            return shape_err(format!("prediction {:?} vs pseudo-label {:?}", p.shape(), y.shape()));
        }
    }

    let mut acc: Vec<Tensor> = Vec::with_capacity(n * (n - 1));
    let mut pair_iterations = 0;
    for l in 0..n {
        for r in l + 1..n {
            pair_iterations += 1;
            acc.push(cross_entropy_mean(&probs[l], pseudo[r].as_target(), None)?);
            acc.push(cross_entropy_mean(&probs[r], pseudo[l].as_target(), None)?);
        }
    }
    let terms = acc.len();
    let loss = add_all(&acc)?.scale(1.0 / (n - 1) as f64);
    Ok(CpsLoss { loss, pair_iterations, terms })
}

/// `sup + lambda * (cps_l + cps_u)`.
pub fn total_loss(sup: &Tensor, cps_l: &Tensor, cps_u: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("CPS weight must be a nonnegative number, got {lambda}"));
    }
    sup.add(&cps_l.add(cps_u)?.scale(lambda))
}
