use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::error::{Error, Result};
use crate::tabular::Dataset;

/// Model-level fairness and predictive-quality audit on a labelled split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFairnessAudit {
    /// `|P(ŷ=1 | G₀) − P(ŷ=1 | G₁)|`
    pub dp_difference: f64,
    /// `max(|TPR₀ − TPR₁|, |FPR₀ − FPR₁|)`
    pub eo_difference: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub positive_rate: [f64; 2],
    pub tpr: [f64; 2],
    pub fpr: [f64; 2],
}

#[derive(Default, Clone, Copy)]
struct Confusion {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

impl Confusion {
    fn add(&mut self, pred: u8, label: u8) {
        match (pred, label) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn positive_rate(&self) -> f64 {
        ratio(self.tp + self.fp, self.total())
    }

    fn tpr(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| ratio(self.tp, self.tp + self.fn_))
    }

    fn fpr(&self) -> Option<f64> {
        (self.fp + self.tn > 0).then(|| ratio(self.fp, self.fp + self.tn))
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Gap between two optional rates; a rate undefined in either group
/// (no positives or no negatives) contributes no gap.
fn gap(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => 0.0,
    }
}

/// Audits precomputed predictions against labels and protected values.
pub fn audit_predictions(predictions: &[u8], labels: &[u8], protected: &[u8]) -> Result<ModelFairnessAudit> {
    if predictions.len() != labels.len() || labels.len() != protected.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            actual: predictions.len().min(protected.len()),
        });
    }
    let mut groups = [Confusion::default(); 2];
    let mut all = Confusion::default();
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(protected) {
        groups[(g == 1) as usize].add(p, y);
        all.add(p, y);
    }
    for (g, c) in groups.iter().enumerate() {
        if c.total() == 0 {
            return Err(Error::MissingGroup(g as u8));
        }
    }
    let precision = ratio(all.tp, all.tp + all.fp);
    let recall = ratio(all.tp, all.tp + all.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let [g0, g1] = groups;
    Ok(ModelFairnessAudit {
        dp_difference: (g0.positive_rate() - g1.positive_rate()).abs(),
        eo_difference: gap(g0.tpr(), g1.tpr()).max(gap(g0.fpr(), g1.fpr())),
        accuracy: ratio(all.tp + all.tn, all.total()),
        precision,
        recall,
        f1,
        positive_rate: [g0.positive_rate(), g1.positive_rate()],
        tpr: [g0.tpr().unwrap_or(0.0), g1.tpr().unwrap_or(0.0)],
        fpr: [g0.fpr().unwrap_or(0.0), g1.fpr().unwrap_or(0.0)],
    })
}

/// Audits `h` on a labelled dataset (the test split in the pipeline).
pub fn audit_fairness(h: &dyn Classifier, test: &Dataset) -> Result<ModelFairnessAudit> {
    let preds: Vec<u8> = test.normalized().iter().map(|x| h.predict(x)).collect();
    let protected: Vec<u8> = (0..test.len()).map(|i| test.protected_value(i)).collect();
    audit_predictions(&preds, test.labels(), &protected)
}
