use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Frames with `prob >= threshold` are called abnormal. The first point
    /// has threshold `+inf`.
    pub threshold: f64,
    pub sensitivity: f64,
    /// 1 − specificity.
    pub fpr: f64,
}

/// Points from (0, 0) to (1, 1), non-decreasing in both coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Sweeps every distinct probability as a threshold; tied scores move
/// together.
pub fn roc(probs: &[f64], labels: &[usize]) -> Result<RocCurve> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(
            "AUC undefined: labels contain a single class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        sensitivity: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = probs[order[i]];
        while i < order.len() && probs[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            sensitivity: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoid area under the curve.
pub fn auc(curve: &RocCurve) -> Result<f64> {
    let p = &curve.points;
    if p.len() < 2 || p.iter().any(|q| q.sensitivity.is_nan() || q.fpr.is_nan()) {
        return Err(Error::Undefined("AUC undefined: degenerate curve".into()));
    }
    Ok(p.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].sensitivity + w[0].sensitivity) / 2.0)
        .sum())
}

/// Highest-specificity point with sensitivity at least `target`; ties go
/// to the higher threshold.
pub fn operating_point(curve: &RocCurve, target_sensitivity: f64) -> Result<OperatingPoint> {
    curve
        .points
        .iter()
        .filter(|p| p.sensitivity >= target_sensitivity)
        .min_by(|a, b| a.fpr.total_cmp(&b.fpr))
        .map(|p| OperatingPoint {
            threshold: p.threshold,
            sensitivity: p.sensitivity,
            specificity: 1.0 - p.fpr,
        })
        .ok_or_else(|| {
            Error::Undefined(format!(
                "no operating point reaches sensitivity {target_sensitivity}"
            ))
        })
}

pub fn roc_to_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,sensitivity,specificity\n");
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.threshold, p.sensitivity, 1.0 - p.fpr).unwrap();
    }
    out
}

/// `size × size` grayscale plot: white background, grey diagonal, black
/// curve; x is the false-positive rate, y the sensitivity (up).
pub fn render_roc_pgm(curve: &RocCurve, size: usize) -> Vec<u8> {
    let size = size.max(2);
    let mut px = vec![255u8; size * size];
    let last = (size - 1) as f64;
    let mut plot = |x: f64, y: f64, v: u8| {
        let cx = (x * last).round() as usize;
        let cy = ((1.0 - y) * last).round() as usize;
        px[cy.min(size - 1) * size + cx.min(size - 1)] = v;
    };
    for i in 0..size {
        let t = i as f64 / last;
        plot(t, t, 180);
    }
    for w in curve.points.windows(2) {
        let steps = (((w[1].fpr - w[0].fpr).abs() + (w[1].sensitivity - w[0].sensitivity).abs()) * last)
            .ceil()
            .max(1.0) as usize;
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            plot(
                w[0].fpr + f * (w[1].fpr - w[0].fpr),
                w[0].sensitivity + f * (w[1].sensitivity - w[0].sensitivity),
                0,
            );
        }
    }
    px
}
