//! Classification metrics for the high-emission class and repeated-trial
//! statistics.

mod sweep;
mod trials;

pub use sweep::{
    ratio_positive_rate, ratio_sweep, sweep_to_csv, RatioResult, SweepRow, SweepSpec, SweepTable,
    VariantSpec, SWEEP_METRICS,
};
pub use trials::{repeated_trials, summarize, TrialFailure, TrialStats, TrialSummary};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {truth} labels vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("non-binary value {value} at index {index}")]
    NonBinary { index: usize, value: u8 },
    #[error("at least one trial is required")]
    NoTrials,
    #[error("emission ratio {ratio} is invalid: {reason}")]
    InvalidRatio { ratio: f64, reason: String },
    #[error("every trial failed; first failure: {0}")]
    AllTrialsFailed(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    pub n_tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.n_tp + self.n_fp + self.n_fn + self.n_tn
    }

    pub fn recall(&self) -> Option<f64> {
        recall(self)
    }

    pub fn precision(&self) -> Option<f64> {
        precision(self)
    }

    pub fn f1(&self) -> Option<f64> {
        f1(self)
    }
}

/// Counts with label 1 as the positive (high-emission) class.
pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (index, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        match (t, p) {
            (1, 1) => cm.n_tp += 1,
            (0, 1) => cm.n_fp += 1,
            (1, 0) => cm.n_fn += 1,
            (0, 0) => cm.n_tn += 1,
            _ => {
                return Err(MetricsError::NonBinary {
                    index,
                    value: if t > 1 { t } else { p },
                })
            }
        }
    }
    Ok(cm)
}

/// `tp / (tp + fn)`; `None` when there are no positives.
pub fn recall(cm: &ConfusionMatrix) -> Option<f64> {
    let d = cm.n_tp + cm.n_fn;
    (d > 0).then(|| cm.n_tp as f64 / d as f64)
}

/// `tp / (tp + fp)`; `None` when nothing was predicted positive.
pub fn precision(cm: &ConfusionMatrix) -> Option<f64> {
    let d = cm.n_tp + cm.n_fp;
    (d > 0).then(|| cm.n_tp as f64 / d as f64)
}

/// Harmonic mean of precision and recall; `None` if either is undefined,
/// `0` when both are zero.
pub fn f1(cm: &ConfusionMatrix) -> Option<f64> {
    let p = precision(cm)?;
    let r = recall(cm)?;
    if p + r == 0.0 {
        Some(0.0)
    } else {
        Some(2.0 * p * r / (p + r))
    }
}

/// Recall, precision and F1 for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub confusion: ConfusionMatrix,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassMetrics {
    pub fn from_labels(y_true: &[u8], y_pred: &[u8]) -> Result<Self, MetricsError> {
        let cm = confusion(y_true, y_pred)?;
        Ok(Self {
            confusion: cm,
            recall: recall(&cm),
            precision: precision(&cm),
            f1: f1(&cm),
        })
    }
}
