//! Confusion matrix and mean intersection-over-union.

use crate::diffcore::LabelMap;
use crate::ensemble::ClassMap;
use crate::error::{invalid, shape_err, Result};

/// Rows are ground-truth classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> ConfusionMatrix {
        ConfusionMatrix { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per non-ignored pixel at `[gt, pred]`. On error the
    /// matrix is left untouched.
    pub fn accumulate(&mut self, pred: &ClassMap, gt: &LabelMap, ignore_index: Option<usize>) -> Result<()> {
        if pred.shape() != gt.shape() {
            return shape_err(format!("prediction {:?} vs labels {:?}", pred.shape(), gt.shape()));
        }
        let c = self.num_classes;
        let mut delta = vec![0u64; c * c];
        for (&p, &g) in pred.classes().iter().zip(gt.classes()) {
            if Some(g) == ignore_index {
                continue;
            }
            if g >= c || p >= c {
                return invalid(format!("class pair (gt {g}, pred {p}) out of range for {c} classes"));
            }
            delta[g * c + p] += 1;
        }
        self.counts.iter_mut().zip(delta).for_each(|(a, d)| *a += d);
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return shape_err(format!("merge {} with {} classes", self.num_classes, other.num_classes));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// IoU per class; `None` where TP + FP + FN is zero.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..c).map(|j| self.get(k, j)).sum();
                let col: u64 = (0..c).map(|i| self.get(i, k)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes with a nonzero denominator.
    pub fn miou(&self) -> Result<f64> {
        let included: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if included.is_empty() {
            return invalid("mIoU of an empty confusion matrix");
        }
        Ok(included.iter().sum::<f64>() / included.len() as f64)
    }
}

/// Percent with two decimals, e.g. `0.6461 -> "64.61"`.
pub fn format_percent(miou: f64) -> String {
    format!("{:.2}", miou * 100.0)
}
