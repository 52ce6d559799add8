//! Frame-level diagnostic metrics, patient-clip aggregation, ROC/AUC,
//! Krippendorff's alpha and fold tables. Abnormal is the positive class.

mod agreement;
mod patient;
mod predictions;
mod report;
mod roc;

pub use agreement::{krippendorff_alpha, RatingMatrix};
pub use patient::{
    aggregate_patient, patient_failures, patient_predictions, FailureKind, PatientFailure,
    PatientPrediction,
};
pub use predictions::{load_predictions, parse_predictions, predictions_to_string, PredictionRow};
pub use report::{comparison_table, fold_report, FoldReport};
pub use roc::{auc, operating_point, render_roc_pgm, roc, roc_to_csv, OperatingPoint, RocCurve, RocPoint};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted_abnormal: bool, abnormal: bool) {
        match (predicted_abnormal, abnormal) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Counts with `prob >= threshold` predicting abnormal, so a probability
/// exactly at the threshold is called abnormal.
pub fn confusion(probs: &[f64], labels: &[usize], threshold: f64) -> Result<ConfusionCounts> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in probs.iter().zip(labels) {
        if l > 1 {
            return Err(Error::Config(format!("label {l} is not 0 or 1")));
        }
        c.add(p >= threshold, l == 1);
    }
    Ok(c)
}

/// Undefined ratios (zero denominators) are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub f1: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["sensitivity", "specificity", "accuracy", "f1"];

    pub fn values(&self) -> [f64; 4] {
        [self.sensitivity, self.specificity, self.accuracy, self.f1]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Formats a metric value for CSV and console output; NaN prints as `NaN`.
pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}
