use std::collections::BTreeMap;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::metrics::PredictionRow;

/// Mean of the frame probabilities of one clip.
///
/// The values are sorted before a pairwise sum, so any permutation of the
/// input gives the same bits; the result is clamped into `[min, max]`.
pub fn aggregate_patient(frame_probs: &[f64]) -> Result<f64> {
    if frame_probs.is_empty() {
        return Err(Error::Empty("patient has no informative frames".into()));
    }
    if let Some(p) = frame_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("frame probability {p} outside [0, 1]")));
    }
    let mut v = frame_probs.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = pairwise_sum(&v) / v.len() as f64;
    Ok(mean.clamp(v[0], v[v.len() - 1]))
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub frame_probs: Vec<f64>,
    pub aggregate: f64,
    pub predicted: Label,
    pub truth: Label,
}

/// Groups frame predictions by patient (sorted by id) and thresholds the
/// aggregate; `>= threshold` is abnormal.
pub fn patient_predictions(rows: &[PredictionRow], threshold: f64) -> Result<Vec<PatientPrediction>> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Label)> = BTreeMap::new();
    for r in rows {
        let label = Label::from_class(r.label)?;
        let entry = groups.entry(&r.patient_id).or_insert((Vec::new(), label));
        if entry.1 != label {
            return Err(Error::Config(format!(
                "patient {} has frames with different labels",
                r.patient_id
            )));
        }
        entry.0.push(r.prob);
    }
    groups
        .into_iter()
        .map(|(id, (probs, truth))| {
            let aggregate = aggregate_patient(&probs)?;
            Ok(PatientPrediction {
                patient_id: id.to_string(),
                frame_probs: probs,
                aggregate,
                predicted: if aggregate >= threshold { Label::Abnormal } else { Label::Normal },
                truth,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    FalsePositive,
    FalseNegative,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::FalsePositive => "false_positive",
            FailureKind::FalseNegative => "false_negative",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientFailure {
    pub patient_id: String,
    pub aggregate: f64,
    pub kind: FailureKind,
}

/// Misclassified patients, most confident mistakes (largest
/// `|aggregate − 0.5|`) first; ties keep patient order.
pub fn patient_failures(predictions: &[PatientPrediction]) -> Vec<PatientFailure> {
    let mut out: Vec<PatientFailure> = predictions
        .iter()
        .filter(|p| p.predicted != p.truth)
        .map(|p| PatientFailure {
            patient_id: p.patient_id.clone(),
            aggregate: p.aggregate,
            kind: if p.predicted == Label::Abnormal {
                FailureKind::FalsePositive
            } else {
                FailureKind::FalseNegative
            },
        })
        .collect();
    out.sort_by(|a, b| (b.aggregate - 0.5).abs().total_cmp(&(a.aggregate - 0.5).abs()));
    out
}
