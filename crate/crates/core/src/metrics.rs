//! Multiclass evaluation: confusion matrix, per-class precision/recall/F1,
//! macro and micro averages, and weighted balanced accuracy.
//!
//! Precision or recall with an empty denominator is reported as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::CLASS_COUNT;

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Argument("confusion counts must be a non-empty square grid".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Five-class matrix from paired label lists.
    pub fn from_labels(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        Self::with_classes(truth, predicted, CLASS_COUNT)
    }

    pub fn with_classes(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Argument(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Argument("no examples to evaluate".into()));
        }
        let mut m = ConfusionMatrix::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::Argument(format!("class index out of range: ({t}, {p})")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    /// Column sum minus the diagonal.
    pub fn false_positives(&self, k: usize) -> u64 {
        self.column_total(k) - self.counts[k][k]
    }

    /// Row sum minus the diagonal.
    pub fn false_negatives(&self, k: usize) -> u64 {
        self.support(k) - self.counts[k][k]
    }

    /// Number of examples whose true class is `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn column_total(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision_recall(m: &ConfusionMatrix, k: usize) -> (f64, f64) {
    let tp = m.true_positives(k);
    (
        ratio(tp, tp + m.false_positives(k)),
        ratio(tp, tp + m.false_negatives(k)),
    )
}

pub fn macro_precision(m: &ConfusionMatrix) -> f64 {
    (0..m.n_classes()).map(|k| precision_recall(m, k).0).sum::<f64>() / m.n_classes() as f64
}

pub fn macro_recall(m: &ConfusionMatrix) -> f64 {
    (0..m.n_classes()).map(|k| precision_recall(m, k).1).sum::<f64>() / m.n_classes() as f64
}

/// Σ TP / Σ column totals.
pub fn micro_precision(m: &ConfusionMatrix) -> f64 {
    let tp: u64 = (0..m.n_classes()).map(|k| m.true_positives(k)).sum();
    let cols: u64 = (0..m.n_classes()).map(|k| m.column_total(k)).sum();
    ratio(tp, cols)
}

pub fn accuracy(m: &ConfusionMatrix) -> f64 {
    let tp: u64 = (0..m.n_classes()).map(|k| m.true_positives(k)).sum();
    ratio(tp, m.total())
}

/// How class recalls are combined into the balanced-accuracy figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancedWeighting {
    /// Weight each present class by the inverse of its frequency share.
    #[default]
    InverseFrequency,
    /// Plain mean recall over all classes.
    Uniform,
}

/// Recall averaged with weights `1 / w_k`, `w_k = n_k / N`, normalized by
/// the weight total. Classes absent from the true labels are skipped.
pub fn weighted_balanced_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    balanced_accuracy(m, BalancedWeighting::InverseFrequency)
}

pub fn balanced_accuracy(m: &ConfusionMatrix, weighting: BalancedWeighting) -> Result<f64> {
    let n = m.total();
    if n == 0 {
        return Err(Error::Argument("balanced accuracy of an empty confusion matrix".into()));
    }
    if weighting == BalancedWeighting::Uniform {
        return Ok(macro_recall(m));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..m.n_classes() {
        let support = m.support(k);
        if support == 0 {
            continue;
        }
        let inv_share = n as f64 / support as f64;
        num += precision_recall(m, k).1 * inv_share;
        den += inv_share;
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub micro_precision: f64,
    pub weighted_balanced_accuracy: f64,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix, weighting: BalancedWeighting) -> Result<Self> {
        let (precision, recall): (Vec<f64>, Vec<f64>) =
            (0..m.n_classes()).map(|k| precision_recall(m, k)).unzip();
        let f1 = precision
            .iter()
            .zip(&recall)
            .map(|(&p, &r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
            .collect();
        Ok(MetricsReport {
            accuracy: accuracy(m),
            precision,
            recall,
            f1,
            macro_precision: macro_precision(m),
            macro_recall: macro_recall(m),
            micro_precision: micro_precision(m),
            weighted_balanced_accuracy: balanced_accuracy(m, weighting)?,
        })
    }

    pub const CSV_COLUMNS: [&'static str; 5] = [
        "accuracy",
        "weighted_balanced_accuracy",
        "macro_precision",
        "macro_recall",
        "micro_precision",
    ];

    /// The summary columns in [`Self::CSV_COLUMNS`] order.
    pub fn summary_values(&self) -> [f64; 5] {
        [
            self.accuracy,
            self.weighted_balanced_accuracy,
            self.macro_precision,
            self.macro_recall,
            self.micro_precision,
        ]
    }

    /// Comma-separated summary values.
    pub fn csv_fields(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.summary_values().iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s
    }
}

/// Builds the full report for paired true/predicted class lists.
pub fn report(truth: &[usize], predicted: &[usize]) -> Result<MetricsReport> {
    MetricsReport::from_confusion(
        &ConfusionMatrix::from_labels(truth, predicted)?,
        BalancedWeighting::InverseFrequency,
    )
}
