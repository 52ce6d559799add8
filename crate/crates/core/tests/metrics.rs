mod common;

use camds::data::Label;
use camds::metrics::*;
use camds::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{alpha_oracle, mann_whitney};

fn counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> ConfusionCounts {
    ConfusionCounts { tp, fp, tn, fn_ }
}

#[test]
fn confusion_examples() {
    assert_eq!(confusion(&[0.9], &[1], 0.5).unwrap(), counts(1, 0, 0, 0));
    assert_eq!(confusion(&[0.5], &[0], 0.5).unwrap(), counts(0, 1, 0, 0));
    assert!(matches!(confusion(&[], &[], 0.5), Err(Error::Empty(_))));
    assert!(confusion(&[0.1, 0.2], &[1], 0.5).is_err());
    assert!(confusion(&[0.1], &[2], 0.5).is_err());
}

#[test]
fn confusion_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probs: Vec<f64> = (0..1000).map(|_| (rng.gen_range(0..=20) as f64) / 20.0).collect();
    let labels: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
    let c = confusion(&probs, &labels, 0.5).unwrap();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..1000 {
        let called = !(probs[i] < 0.5);
        match (called, labels[i]) {
            (true, 1) => tp += 1,
            (true, _) => fp += 1,
            (false, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    assert_eq!(c, counts(tp, fp, tn, fn_));
    assert_eq!(c.total(), 1000);
}

#[test]
fn metric_formulas() {
    let m = metrics(&counts(8, 1, 9, 2));
    assert_eq!(m.sensitivity, 0.8);
    assert_eq!(m.specificity, 0.9);
    assert_eq!(m.accuracy, 0.85);
    assert!((m.f1 - 16.0 / 19.0).abs() < 1e-15);

    let m = metrics(&counts(0, 3, 4, 0));
    assert!(m.sensitivity.is_nan());
    assert_eq!(m.specificity, 4.0 / 7.0);
    assert_eq!(m.f1, 0.0);
    let m = metrics(&counts(0, 0, 0, 0));
    assert!(m.values().iter().all(|v| v.is_nan()));
    assert_eq!(fmt_value(f64::NAN), "NaN");
}

#[test]
fn metric_identities_on_random_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let c = counts(rng.gen_range(1..50), rng.gen_range(1..50), rng.gen_range(1..50), rng.gen_range(1..50));
        let m = metrics(&c);
        let precision = c.tp as f64 / (c.tp + c.fp) as f64;
        let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
        let harmonic = 2.0 * precision * recall / (precision + recall);
        assert!((m.f1 - harmonic).abs() < 1e-12);
        let (p, n) = ((c.tp + c.fn_) as f64, (c.tn + c.fp) as f64);
        let weighted = (m.sensitivity * p + m.specificity * n) / (p + n);
        assert!((m.accuracy - weighted).abs() < 1e-12, "{} vs {weighted}", m.accuracy);
    }
}

#[test]
fn patient_aggregation() {
    let a = aggregate_patient(&[0.2, 0.4, 0.6]).unwrap();
    assert!((a - 0.4).abs() < 1e-15);
    assert_eq!(aggregate_patient(&[1.0; 7]).unwrap(), 1.0);
    let e = aggregate_patient(&[]).unwrap_err();
    assert_eq!(e.to_string(), "patient has no informative frames");
    assert!(aggregate_patient(&[0.5, 1.5]).is_err());

    let rows = [("a", 0.2, 0), ("a", 0.4, 0), ("a", 0.6, 0)].map(|(p, prob, label)| PredictionRow {
        patient_id: p.into(),
        frame_index: 0,
        prob,
        label,
    });
    let pp = patient_predictions(&rows, 0.5).unwrap();
    assert_eq!(pp[0].predicted, Label::Normal);
}

#[test]
fn aggregation_is_permutation_invariant_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let n = rng.gen_range(1..200);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        if rng.gen_bool(0.2) {
            let x = rng.gen::<f64>();
            v.iter_mut().for_each(|p| *p = x);
        }
        let a = aggregate_patient(&v).unwrap();
        let (lo, hi) = v.iter().fold((1.0f64, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        assert!(lo <= a && a <= hi);
        for _ in 0..5 {
            v.shuffle(&mut rng);
            assert_eq!(aggregate_patient(&v).unwrap().to_bits(), a.to_bits());
        }
    }
}

fn prediction(id: &str, aggregate: f64, truth: Label) -> PatientPrediction {
    PatientPrediction {
        patient_id: id.into(),
        frame_probs: vec![aggregate],
        aggregate,
        predicted: if aggregate >= 0.5 { Label::Abnormal } else { Label::Normal },
        truth,
    }
}

#[test]
fn failure_listing() {
    let ok = vec![prediction("a", 0.9, Label::Abnormal), prediction("b", 0.1, Label::Normal)];
    assert!(patient_failures(&ok).is_empty());

    let one = vec![prediction("a", 0.1, Label::Abnormal)];
    let f = patient_failures(&one);
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].kind, FailureKind::FalseNegative);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let preds: Vec<PatientPrediction> = (0..200)
        .map(|i| {
            let truth = if rng.gen_bool(0.5) { Label::Abnormal } else { Label::Normal };
            prediction(&format!("p{i}"), rng.gen(), truth)
        })
        .collect();
    let failures = patient_failures(&preds);
    let correct = preds.iter().filter(|p| p.predicted == p.truth).count();
    assert_eq!(failures.len(), preds.len() - correct);
    for w in failures.windows(2) {
        assert!((w[0].aggregate - 0.5).abs() >= (w[1].aggregate - 0.5).abs());
    }
    for f in &failures {
        let expect = if f.aggregate >= 0.5 { FailureKind::FalsePositive } else { FailureKind::FalseNegative };
        assert_eq!(f.kind, expect);
    }
}

#[test]
fn auc_examples() {
    let c = roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
    assert_eq!(auc(&c).unwrap(), 1.0);
    let c = roc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
    assert_eq!(c.points.len(), 2);
    assert_eq!(auc(&c).unwrap(), 0.5);
    let e = roc(&[0.3, 0.4], &[1, 1]).unwrap_err();
    assert!(e.to_string().contains("AUC undefined"));
}

#[test]
fn auc_matches_rank_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let probs: Vec<f64> = (0..500)
            .map(|_| if trial % 2 == 0 { rng.gen() } else { (rng.gen_range(0..30) as f64) / 29.0 })
            .collect();
        let labels: Vec<usize> = probs.iter().map(|&p| rng.gen_bool(0.3 + 0.4 * p) as usize).collect();
        let curve = roc(&probs, &labels).unwrap();
        let a = auc(&curve).unwrap();
        assert!((a - mann_whitney(&probs, &labels)).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&a));
        let first = curve.points[0];
        let last = *curve.points.last().unwrap();
        assert_eq!((first.fpr, first.sensitivity), (0.0, 0.0));
        assert_eq!((last.fpr, last.sensitivity), (1.0, 1.0));
        for w in curve.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].sensitivity >= w[0].sensitivity);
        }
        let swapped_p: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let swapped_l: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        let b = auc(&roc(&swapped_p, &swapped_l).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);

        for target in [0.5, 0.95, 0.99, 1.0] {
            let op = operating_point(&curve, target).unwrap();
            assert!(op.sensitivity >= target);
            let best = curve
                .points
                .iter()
                .filter(|p| p.sensitivity >= target)
                .map(|p| 1.0 - p.fpr)
                .fold(0.0, f64::max);
            assert_eq!(op.specificity, best);
        }
    }
}

#[test]
fn roc_exports() {
    let c = roc(&[0.2, 0.7], &[0, 1]).unwrap();
    let csv = roc_to_csv(&c);
    assert_eq!(csv.lines().next().unwrap(), "threshold,sensitivity,specificity");
    assert_eq!(csv.lines().count(), 4);
    let px = render_roc_pgm(&c, 32);
    assert_eq!(px.len(), 32 * 32);
    assert_eq!(px[0], 0);
    assert_eq!(px[31], 0);
}

fn grid(rows: &[&[Option<&str>]]) -> RatingMatrix {
    RatingMatrix::from_grid(
        rows.iter()
            .map(|r| r.iter().map(|c| c.map(str::to_string)).collect())
            .collect(),
    )
    .unwrap()
}

#[test]
fn alpha_examples() {
    let a = Some("A");
    let b = Some("B");
    let perfect = grid(&[&[a, b, a], &[a, b, a], &[a, b, a]]);
    assert_eq!(krippendorff_alpha(&perfect).unwrap(), 1.0);

    let m = grid(&[&[a, a, b, b], &[a, b, b, b]]);
    let alpha = krippendorff_alpha(&m).unwrap();
    assert!((alpha - alpha_oracle(&m)).abs() < 1e-9);
    assert!((alpha - 8.0 / 15.0).abs() < 1e-12);

    assert!(krippendorff_alpha(&grid(&[&[a, a], &[a, a]])).unwrap().is_nan());
    assert!(matches!(krippendorff_alpha(&grid(&[&[a, None], &[None, b]])), Err(Error::Empty(_))));
}

#[test]
fn alpha_matches_oracle_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let labels = ["x", "y", "z", "w"];
    let mut checked = 0;
    for _ in 0..1000 {
        let raters = rng.gen_range(2..6);
        let items = rng.gen_range(1..12);
        let alphabet = rng.gen_range(2..=4);
        let rows: Vec<Vec<Option<String>>> = (0..raters)
            .map(|_| {
                (0..items)
                    .map(|_| (!rng.gen_bool(0.25)).then(|| labels[rng.gen_range(0..alphabet)].to_string()))
                    .collect()
            })
            .collect();
        let m = RatingMatrix::from_grid(rows.clone()).unwrap();
        let Ok(alpha) = krippendorff_alpha(&m) else { continue };
        let oracle = alpha_oracle(&m);
        if oracle.is_nan() {
            assert!(alpha.is_nan());
            continue;
        }
        assert!((alpha - oracle).abs() < 1e-9, "{alpha} vs {oracle}");
        checked += 1;

        // Relabelling and rater order do not matter.
        let mut perm = labels;
        perm.shuffle(&mut rng);
        let mut relabelled: Vec<Vec<Option<String>>> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| c.as_ref().map(|v| perm[labels.iter().position(|l| l == v).unwrap()].to_string()))
                    .collect()
            })
            .collect();
        relabelled.shuffle(&mut rng);
        let other = krippendorff_alpha(&RatingMatrix::from_grid(relabelled).unwrap()).unwrap();
        assert!((alpha - other).abs() < 1e-9);
    }
    assert!(checked > 900);
}

#[test]
fn rating_csv() {
    let m = RatingMatrix::parse_csv("rater,i1,i2,i3\nr1,A,,B\nr2,A,B,B\n", "r").unwrap();
    assert_eq!(m.items, vec!["i1", "i2", "i3"]);
    assert_eq!(m.ratings[0][1], None);
    assert_eq!(m.alphabet(), vec!["A", "B"]);
    assert!(RatingMatrix::parse_csv("rater,i1\nr1,A,B\n", "r").is_err());
}

fn m(acc: f64) -> Metrics {
    Metrics { sensitivity: acc, specificity: 1.0 - acc, accuracy: acc, f1: acc / 2.0 }
}

#[test]
fn fold_report_averages() {
    let one = fold_report(&[("1".into(), m(0.7))]).unwrap();
    assert_eq!(one.average, m(0.7));

    let two = fold_report(&[("1".into(), m(0.8)), ("2".into(), m(0.9))]).unwrap();
    assert!((two.average.accuracy - 0.85).abs() < 1e-15);
    assert!(fold_report(&[]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let folds: Vec<(String, Metrics)> = (1..=5).map(|i| (format!("fold{i}"), m(rng.gen()))).collect();
    let report = fold_report(&folds).unwrap();
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "measure,fold1,fold2,fold3,fold4,fold5,average");
    for line in &lines[1..] {
        let cells: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        let mean = cells[..5].iter().sum::<f64>() / 5.0;
        assert!((mean - cells[5]).abs() < 1e-12);
    }
    let table = comparison_table(&[("cam-ds".into(), m(0.9))]);
    assert_eq!(table, "model,sensitivity,specificity,accuracy,f1\ncam-ds,0.9,0.09999999999999998,0.9,0.45\n");
}

#[test]
fn prediction_csv_round_trip() {
    let rows = vec![
        PredictionRow { patient_id: "a".into(), frame_index: 3, prob: 0.125, label: 1 },
        PredictionRow { patient_id: "b".into(), frame_index: 0, prob: 1.0 / 3.0, label: 0 },
    ];
    assert_eq!(parse_predictions(&predictions_to_string(&rows), "p").unwrap(), rows);
    assert!(parse_predictions("patient_id,frame_index,prob,label\na,0,1.5,1\n", "p").is_err());
    assert!(parse_predictions("patient_id,frame_index,prob,label\na,0,0.5,maybe\n", "p").is_err());
}
