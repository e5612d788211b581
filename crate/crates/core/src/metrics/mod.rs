//! Binary classification metrics with attack as the positive class, and
//! report rendering.

mod report;

use serde::{Deserialize, Serialize};

pub use report::{build_report, render, render_comparison, ExperimentLabel, MetricsReport, ReportFormat, Timings};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    pub threshold: f64,
}

/// A ratio that may be undefined; undefined values are reported as 0 with
/// `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

/// Tallies predictions `score >= threshold` against labels.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "confusion",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    let mut cm = ConfusionMatrix {
        true_pos: 0,
        false_pos: 0,
        true_neg: 0,
        false_neg: 0,
        threshold,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.true_pos += 1,
            (true, false) => cm.false_pos += 1,
            (false, false) => cm.true_neg += 1,
            (false, true) => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn accuracy(&self) -> Metric {
        Metric::ratio(self.true_pos + self.true_neg, self.total())
    }

    pub fn precision(&self) -> Metric {
        Metric::ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    pub fn recall(&self) -> Metric {
        Metric::ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    pub fn f1(&self) -> Metric {
        f1_score(self.precision(), self.recall())
    }

    /// The same matrix with normal treated as the positive class.
    pub fn flipped(&self) -> Self {
        Self {
            true_pos: self.true_neg,
            false_pos: self.false_neg,
            true_neg: self.true_pos,
            false_neg: self.false_pos,
            threshold: self.threshold,
        }
    }
}

/// Harmonic mean of precision and recall; degenerate if either input is or
/// both are zero.
pub fn f1_score(precision: Metric, recall: Metric) -> Metric {
    let (p, r) = (precision.value, recall.value);
    if precision.degenerate || recall.degenerate || p + r == 0.0 {
        Metric {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Metric {
            value: 2.0 * p * r / (p + r),
            degenerate: false,
        }
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic: the share of
/// (attack, normal) pairs where the attack scores higher, ties counting one
/// half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "auc_roc",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Dataset("AUC is undefined when only one class is present".into()));
    }
    // Twice the statistic, in integers: 2 per concordant pair, 1 per tie.
    let mut twice: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            if pairs[j].1 == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice += u128::from(pos) * (2 * u128::from(neg_below) + u128::from(neg));
        neg_below += neg;
        i = j;
    }
    Ok(twice as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}
