//! Acceptance suite: one PASS/FAIL line per criterion. Runs the full toy
//! training experiment (three heads plus a determinism rerun), so it takes
//! several minutes on one core.

mod common;

use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

use camds::data::image::read_raster;
use camds::data::*;
use camds::metrics::*;
use camds::model::*;
use camds::tensor::{Graph, Mode, Tensor};
use camds::train::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{alpha_oracle, mann_whitney};

type Check = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn non_reproducible_declared() -> Check {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md");
    let readme = std::fs::read_to_string(path).map_err(|e| format!("README.md unreadable: {e}"))?;
    let missing: Vec<&str> = ["91.7%", "94.7%", "76.7%", "95.8%", "not desk-reproducible"]
        .into_iter()
        .filter(|s| !readme.contains(s))
        .collect();
    ensure(
        missing.is_empty(),
        format!("README declares full-scale figures as context only (missing: {missing:?})"),
    )
}

fn gradient_oracle() -> Check {
    let start = Instant::now();
    let mut model = Model::<f64>::build(ModelConfig {
        input_size: 32,
        num_resolutions: 3,
        channels_per_stage: vec![4, 6, 8],
        head: HeadKind::CamDs,
        seed: 17,
        ..ModelConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = Tensor::from_fn([2, 3, 32, 32], |_| rng.gen_range(0.0..1.0));
    let report = model
        .check_gradients(&batch, &[0, 1], 1e-5, 1e-4)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        report.passed() && report.checked > 0 && elapsed < Duration::from_secs(120),
        format!(
            "max relative error {:.3e} over {} coordinates ({} near-kink excluded) in {:.1}s",
            report.max_rel_error,
            report.checked,
            report.excluded,
            elapsed.as_secs_f64()
        ),
    )
}

fn algebraic_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_gap = 0.0f64;
    for _ in 0..200 {
        let (b, k, h, w) = (rng.gen_range(1..3), rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..9));
        let feats = Tensor::from_fn([b, k, h, w], |_| rng.gen_range(-2.0..2.0));
        let weights = Tensor::from_fn([2, k, 1, 1], |_| rng.gen_range(-2.0..2.0));
        let mut g = Graph::<f64>::new();
        let x = g.input(feats);
        let wk = g.input(weights.clone());
        let maps = g.conv2d(x, wk, None, 1, 0).map_err(|e| e.to_string())?;
        let a = g.global_avg_pool(maps).map_err(|e| e.to_string())?;
        let pooled = g.global_avg_pool(x).map_err(|e| e.to_string())?;
        let wl = g.input(weights.reshape([2, k]).map_err(|e| e.to_string())?);
        let c = g.linear(pooled, wl, None).map_err(|e| e.to_string())?;
        for (u, v) in g.value(a).data().iter().zip(g.value(c).data()) {
            worst_gap = worst_gap.max((u - v).abs());
        }
    }

    let mut sum_exact = true;
    let mut loss_exact = true;
    let mut worst_ln2 = 0.0f64;
    for trial in 0..20u64 {
        let t = 1 + (trial as usize % 4);
        let cfg = ModelConfig {
            input_size: 32,
            num_resolutions: t,
            channels_per_stage: vec![4; t],
            blocks_per_stage: 1,
            seed: trial,
            ..ModelConfig::default()
        };
        let mut m = Model::<f64>::build(cfg.clone()).map_err(|e| e.to_string())?;
        let batch = Tensor::from_fn([3, 3, 32, 32], |_| rng.gen_range(0.0..1.0));
        let mut fwd = m.forward(&batch, Mode::Train).map_err(|e| e.to_string())?;
        for i in 0..3 {
            let sides = fwd.side_scores(i).map_err(|e| e.to_string())?;
            let fin = fwd.final_scores(i).map_err(|e| e.to_string())?;
            for c in 0..2 {
                let mut acc = sides[0][c];
                for s in &sides[1..] {
                    acc += s[c];
                }
                sum_exact &= acc == fin[c];
            }
        }
        let loss = fwd.loss(&[0, 1, 1]).map_err(|e| e.to_string())?;
        let mut acc = loss.final_term;
        for s in &loss.side_terms {
            acc += s;
        }
        loss_exact &= acc == loss.total_value;

        for p in m.params_mut().iter_mut() {
            if p.name().starts_with("cam") {
                p.value.fill(0.0);
            }
        }
        let mut fwd = m.forward(&batch, Mode::Train).map_err(|e| e.to_string())?;
        let zero = fwd.loss(&[0, 1, 1]).map_err(|e| e.to_string())?;
        worst_ln2 = worst_ln2.max((zero.total_value - (t as f64 + 1.0) * LN_2).abs());
    }
    ensure(
        worst_gap < 1e-6 && sum_exact && loss_exact && worst_ln2 < 1e-6,
        format!(
            "GAP/1x1 commutation max gap {worst_gap:.2e} over 200 trials; score sum exact: {sum_exact}; \
             loss sum exact: {loss_exact}; zero-score loss off by {worst_ln2:.2e}"
        ),
    )
}

fn fold_reproduction() -> Check {
    let labels = |n: usize| -> std::collections::BTreeMap<String, Label> {
        (0..n)
            .map(|i| (format!("p{i:03}"), if i % 2 == 0 { Label::Normal } else { Label::Abnormal }))
            .collect()
    };
    let folds = split_folds(&labels(114), 5, SplitRatios::default(), 0, false).map_err(|e| e.to_string())?;
    let sizes: Vec<(usize, usize, usize)> = folds.iter().map(|f| (f.train.len(), f.val.len(), f.test.len())).collect();
    let appendix = sizes.iter().all(|&s| s == (91, 11, 12));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut partition = true;
    for _ in 0..100 {
        let n = rng.gen_range(10..300);
        let all = labels(n);
        for f in split_folds(&all, 5, SplitRatios::default(), rng.gen(), false).map_err(|e| e.to_string())? {
            let total = f.train.len() + f.val.len() + f.test.len();
            let union: std::collections::BTreeSet<&String> = f.train.iter().chain(&f.val).chain(&f.test).collect();
            partition &= total == n
                && union.len() == n
                && union.iter().all(|p| all.contains_key(*p))
                && f.train.len() == (0.8 * n as f64 + 1e-9).floor() as usize;
        }
    }
    ensure(
        appendix && partition,
        format!("n=114 per-fold sizes {:?}; partition holds for 100 random n: {partition}", sizes[0]),
    )
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = ["a", "b", "c"];
    let mut worst_alpha = 0.0f64;
    let mut matrices = 0;
    while matrices < 1000 {
        let (raters, items) = (rng.gen_range(2..6), rng.gen_range(2..15));
        let alphabet = rng.gen_range(2..=3);
        let grid: Vec<Vec<Option<String>>> = (0..raters)
            .map(|_| {
                (0..items)
                    .map(|_| (!rng.gen_bool(0.2)).then(|| labels[rng.gen_range(0..alphabet)].to_string()))
                    .collect()
            })
            .collect();
        let m = RatingMatrix::from_grid(grid).map_err(|e| e.to_string())?;
        let oracle = alpha_oracle(&m);
        let Ok(alpha) = krippendorff_alpha(&m) else { continue };
        if oracle.is_nan() || alpha.is_nan() {
            if oracle.is_nan() != alpha.is_nan() {
                return Err("alpha and oracle disagree on definedness".into());
            }
            continue;
        }
        worst_alpha = worst_alpha.max((alpha - oracle).abs());
        matrices += 1;
    }
    let perfect = RatingMatrix::from_grid(
        (0..3)
            .map(|_| ["x", "y", "x", "y"].iter().map(|s| Some(s.to_string())).collect())
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let perfect_alpha = krippendorff_alpha(&perfect).map_err(|e| e.to_string())?;

    let mut worst_auc = 0.0f64;
    let mut instances = 0;
    while instances < 500 {
        let n = rng.gen_range(2..120);
        let probs: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..40) as f64) / 39.0).collect();
        let y: Vec<usize> = probs.iter().map(|&p| rng.gen_bool(0.2 + 0.6 * p) as usize).collect();
        let Ok(curve) = roc(&probs, &y) else { continue };
        let a = auc(&curve).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((a - mann_whitney(&probs, &y)).abs());
        instances += 1;
    }

    let hand = metrics(&ConfusionCounts { tp: 8, fn_: 2, tn: 9, fp: 1 });
    let hand_ok = hand.sensitivity == 0.8
        && hand.specificity == 0.9
        && hand.accuracy == 0.85
        && (hand.f1 - 16.0 / 19.0).abs() < 1e-12;
    ensure(
        worst_alpha < 1e-9 && perfect_alpha == 1.0 && worst_auc < 1e-9 && hand_ok,
        format!(
            "alpha vs oracle max {worst_alpha:.1e} (1000 matrices), perfect agreement {perfect_alpha}; \
             AUC vs rank statistic max {worst_auc:.1e} (500 instances); hand case {:.4}/{:.4}/{:.4}/{:.4}",
            hand.sensitivity, hand.specificity, hand.accuracy, hand.f1
        ),
    )
}

fn schedule() -> Check {
    let c = TrainConfig::paper();
    let got = [lr_at(&c, 0), lr_at(&c, 10_000), lr_at(&c, 40_001)];
    ensure(got == [5e-3, 2.5e-3, 3.125e-4], format!("lr at 0 / 10000 / 40001: {got:?}"))
}

const IMAGE: usize = 64;

struct Toy {
    dir: tempfile::TempDir,
    train: FrameSet,
    val: FrameSet,
    test: FrameSet,
}

fn toy_corpus() -> Result<Toy, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        patients_per_class: 20,
        min_frames: 50,
        max_frames: 50,
        image_size: IMAGE,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic(&spec, dir.path()).map_err(|e| e.to_string())?;
    let labels = patient_labels(&corpus.records).map_err(|e| e.to_string())?;
    // Stratified so the held-out split holds patients of both classes.
    let folds = split_folds(&labels, 1, SplitRatios::default(), 1, true).map_err(|e| e.to_string())?;
    let load = |role| {
        let records: Vec<FrameRecord> = folds[0].select(&corpus.records, role).into_iter().cloned().collect();
        FrameSet::load(&records, dir.path(), IMAGE).map_err(|e| e.to_string())
    };
    Ok(Toy { train: load(Role::Train)?, val: load(Role::Val)?, test: load(Role::Test)?, dir })
}

struct Run {
    checkpoint: Checkpoint,
    history: TrainHistory,
    model: Model<f32>,
    elapsed: Duration,
    test_probs: Vec<f64>,
}

fn toy_run(toy: &Toy, head: HeadKind) -> Result<Run, String> {
    let model = Model::<f32>::build(ModelConfig { head, input_size: IMAGE, ..ModelConfig::default() })
        .map_err(|e| e.to_string())?;
    let config = TrainConfig { max_iterations: 2000, ..TrainConfig::default() };
    let start = Instant::now();
    let (checkpoint, history) = train(model, &toy.train, Some(&toy.val), &config, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let model = Model::<f32>::from_checkpoint(&checkpoint).map_err(|e| e.to_string())?;
    let test_probs = predict(&model, &toy.test, 64, 1).map_err(|e| e.to_string())?;
    Ok(Run { checkpoint, history, model, elapsed, test_probs })
}

fn labels_of(set: &FrameSet) -> Vec<usize> {
    (0..set.len()).map(|i| set.class(i)).collect()
}

fn end_to_end(toy: &Toy, runs: &[(HeadKind, Run)]) -> Check {
    let labels = labels_of(&toy.test);
    let mut rows = Vec::new();
    let mut detail = String::new();
    for (head, run) in runs {
        let m = metrics(&confusion(&run.test_probs, &labels, 0.5).map_err(|e| e.to_string())?);
        detail.push_str(&format!(
            "{head}: test accuracy {:.4} in {:.0}s; ",
            m.accuracy,
            run.elapsed.as_secs_f64()
        ));
        rows.push((head.to_string(), m));
    }
    println!("comparison over {} held-out frames:\n{}", labels.len(), comparison_table(&rows));
    let camds = &runs.iter().find(|(h, _)| *h == HeadKind::CamDs).ok_or("no cam-ds run")?;
    let acc = rows.iter().find(|(h, _)| h == "cam-ds").map(|(_, m)| m.accuracy).unwrap_or(0.0);
    ensure(
        acc >= 0.95 && camds.1.elapsed < Duration::from_secs(15 * 60) && rows.len() == 3,
        detail.trim_end_matches("; ").to_string(),
    )
}

fn cam_localization(toy: &Toy, run: &Run) -> Check {
    let mut model = run.model.clone();
    let res = model.cam_resolutions()[0];
    let (mut inside, mut outside, mut frames) = (0.0, 0.0, 0);
    for i in 0..toy.test.len() {
        if toy.test.class(i) != ABNORMAL {
            continue;
        }
        let (batch, _) = toy.test.batch::<f32>(&[i], |_| {}).map_err(|e| e.to_string())?;
        let fwd = model.forward(&batch, Mode::Eval).map_err(|e| e.to_string())?;
        let cam = fwd.positive_cam(res, ABNORMAL, 0).map_err(|e| e.to_string())?;
        let up = upsample_nearest(&cam, IMAGE, IMAGE).map_err(|e| e.to_string())?;
        let frame = resolve_path(toy.dir.path(), &toy.test.records[i]);
        let mask = read_raster(&mask_path(&frame)).map_err(|e| e.to_string())?;
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (p, &v) in up.iter().enumerate() {
            if mask.samples[p] > 127 {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        inside += si / ni as f64;
        outside += so / no as f64;
        frames += 1;
    }
    let ratio = inside / outside;
    ensure(
        frames >= 100 && ratio >= 1.5,
        format!(
            "mean positive CAM inside masks {:.4} vs outside {:.4}: ratio {ratio:.2} over {frames} abnormal test frames",
            inside / frames as f64,
            outside / frames as f64
        ),
    )
}

fn patient_aggregation(toy: &Toy, run: &Run) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut invariant = true;
    for _ in 0..200 {
        let mut v: Vec<f64> = (0..rng.gen_range(1..300)).map(|_| rng.gen()).collect();
        let a = aggregate_patient(&v).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            v.shuffle(&mut rng);
            invariant &= aggregate_patient(&v).map_err(|e| e.to_string())?.to_bits() == a.to_bits();
        }
    }

    let rows: Vec<PredictionRow> = toy
        .test
        .records
        .iter()
        .zip(&run.test_probs)
        .map(|(r, &p)| PredictionRow {
            patient_id: r.patient_id.clone(),
            frame_index: r.frame_index,
            prob: p,
            label: r.label.class(),
        })
        .collect();
    let failures = patient_failures(&patient_predictions(&rows, 0.5).map_err(|e| e.to_string())?);
    // Recount: plain mean per patient, compared with the truth.
    let mut per_patient: std::collections::BTreeMap<&str, (f64, usize, usize)> = Default::default();
    for r in &rows {
        let e = per_patient.entry(&r.patient_id).or_insert((0.0, 0, r.label));
        e.0 += r.prob;
        e.1 += 1;
    }
    let mut recount: Vec<&str> = per_patient
        .iter()
        .filter(|(_, (sum, n, label))| ((sum / *n as f64 >= 0.5) as usize) != *label)
        .map(|(p, _)| *p)
        .collect();
    recount.sort_unstable();
    let mut listed: Vec<&str> = failures.iter().map(|f| f.patient_id.as_str()).collect();
    listed.sort_unstable();

    let empty = aggregate_patient(&[]).map_err(|e| e.to_string());
    let empty_ok = empty.as_ref().err().map(String::as_str) == Some("patient has no informative frames");
    ensure(
        invariant && listed == recount && empty_ok,
        format!(
            "permutation bit-identical: {invariant}; {} of {} test patients misclassified, recount agrees: {}; \
             empty clip error: {empty_ok}",
            listed.len(),
            per_patient.len(),
            listed == recount
        ),
    )
}

fn determinism(toy: &Toy, first: &Run) -> Check {
    let again = toy_run(toy, HeadKind::CamDs)?;
    let same_ckpt = again.checkpoint.to_bytes() == first.checkpoint.to_bytes();
    let same_history = again.history.to_csv() == first.history.to_csv();
    ensure(
        same_ckpt && same_history,
        format!(
            "checkpoint digest {} vs {}; history identical: {same_history}",
            &first.checkpoint.digest()[..16],
            &again.checkpoint.digest()[..16]
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, check: Check| {
        let (status, detail) = match check {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {status} [{name}] {detail}");
    };

    report(1, "non-reproducible results declared", non_reproducible_declared());
    report(2, "gradient oracle", gradient_oracle());
    report(3, "algebraic identities", algebraic_identities());
    report(4, "fold split reproduction", fold_reproduction());
    report(5, "metric oracles", metric_oracles());
    report(6, "learning-rate schedule", schedule());

    match toy_corpus() {
        Err(e) => {
            for (n, name) in [(7, "toy training"), (8, "CAM localization"), (9, "patient aggregation"), (10, "determinism")] {
                report(n, name, Err(format!("corpus generation failed: {e}")));
            }
        }
        Ok(toy) => {
            let mut runs = Vec::new();
            let mut errors = Vec::new();
            for head in [HeadKind::FcBaseline, HeadKind::Cam, HeadKind::CamDs] {
                match toy_run(&toy, head) {
                    Ok(r) => runs.push((head, r)),
                    Err(e) => errors.push(format!("{head}: {e}")),
                }
            }
            if !errors.is_empty() {
                report(7, "toy training", Err(errors.join("; ")));
            } else {
                report(7, "toy training", end_to_end(&toy, &runs));
            }
            match runs.iter().find(|(h, _)| *h == HeadKind::CamDs) {
                Some((_, run)) => {
                    report(8, "CAM localization", cam_localization(&toy, run));
                    report(9, "patient aggregation", patient_aggregation(&toy, run));
                    report(10, "determinism", determinism(&toy, run));
                }
                None => {
                    for (n, name) in [(8, "CAM localization"), (9, "patient aggregation"), (10, "determinism")] {
                        report(n, name, Err("cam-ds run did not complete".into()));
                    }
                }
            }
        }
    }

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
