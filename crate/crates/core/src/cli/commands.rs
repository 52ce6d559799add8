use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cli::overlay::{parse_kv, Layered, Source};
use crate::cli::{
    thread_count, usage, AgreementArgs, CamArgs, ClassArg, CliError, CliResult, EvalArgs,
    ReportArgs, RocArgs, SplitArgs, SplitRole, SynthArgs, TrainArgs,
};
use crate::data::{
    filter_informative, generate_synthetic, leak_violations, load_folds,
    load_image, load_manifest, patient_labels, prepare_frame, save_folds, split_folds, FoldSplit,
    FrameRecord, FrameSet, Label, Role, SplitRatios, SyntheticSpec,
};
use crate::error::Error;
use crate::metrics::{
    auc, confusion, fmt_value, fold_report, krippendorff_alpha, load_predictions, metrics,
    operating_point, patient_failures, patient_predictions, predictions_to_string, render_roc_pgm,
    roc as roc_curve, roc_to_csv, Metrics, PredictionRow, RatingMatrix,
};
use crate::model::{export_cam, Checkpoint, HeadKind, Model, ModelConfig, ABNORMAL, NORMAL};
use crate::tensor::{Mode, Tensor};
use crate::train::{predict, TrainConfig, TrainHistory, Trainer};

fn mkdir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn read_kv(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text, &path.display().to_string()).map_err(|e| usage(e.to_string()))
}

pub fn synth(a: SynthArgs) -> CliResult {
    let mut layered = Layered::new().section("synthetic", &SyntheticSpec::default());
    if let Some(spec) = &a.spec {
        for (k, v) in read_kv(spec)? {
            layered.set(&k, &v, Source::File).map_err(|e| usage(e.to_string()))?;
        }
    }
    if let Some(seed) = a.seed {
        layered.set("seed", &seed.to_string(), Source::Flag).map_err(|e| usage(e.to_string()))?;
    }
    let spec: SyntheticSpec = layered.get("synthetic").map_err(|e| usage(e.to_string()))?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    print!("{}", layered.describe());
    let corpus = generate_synthetic(&spec, &a.out)?;
    let patients = patient_labels(&corpus.records)?;
    let abnormal = patients.values().filter(|l| **l == Label::Abnormal).count();
    println!("manifest: {}", corpus.manifest_path.display());
    println!(
        "patients: {} ({} normal, {} abnormal)",
        patients.len(),
        patients.len() - abnormal,
        abnormal
    );
    println!(
        "frames: {} ({} informative), masks: {}",
        corpus.records.len(),
        corpus.records.iter().filter(|r| r.informative).count(),
        corpus.masks
    );
    println!("digest: {}", corpus.digest);
    Ok(())
}

/// Appendix-style table: one row per role × class, one column per fold.
fn count_table(title: &str, folds: &[FoldSplit], count: impl Fn(&FoldSplit, Role, Option<Label>) -> usize) -> String {
    let mut out = format!("{title}\n{:<32}", "Dataset");
    for f in folds {
        write!(out, "{:>10}", format!("Fold {}", f.fold)).unwrap();
    }
    out.push('\n');
    for (role, name) in [(Role::Train, "Training"), (Role::Val, "Validation"), (Role::Test, "Testing")] {
        for (label, suffix) in [
            (Some(Label::Normal), "normal"),
            (Some(Label::Abnormal), "abnormal"),
            (None, "normal + abnormal"),
        ] {
            write!(out, "{:<32}", format!("{name} ({suffix})")).unwrap();
            for f in folds {
                write!(out, "{:>10}", count(f, role, label)).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn split(a: SplitArgs) -> CliResult {
    let ratios = SplitRatios {
        train: a.ratios[0],
        val: a.ratios[1],
        test: a.ratios[2],
    };
    ratios.validate().map_err(|e| usage(e.to_string()))?;
    if a.folds == 0 {
        return Err(usage("--folds must be at least 1"));
    }
    let records = load_manifest(&a.manifest)?;
    let labels = patient_labels(&records)?;
    let folds = split_folds(&labels, a.folds, ratios, a.seed, a.stratify)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    save_folds(&folds, &a.out)?;

    print!(
        "{}",
        count_table("Number of patients per fold", &folds, |f, role, label| {
            f.patients(role)
                .iter()
                .filter(|p| label.map_or(true, |l| labels[*p] == l))
                .count()
        })
    );
    println!();
    print!(
        "{}",
        count_table("Number of frames per fold", &folds, |f, role, label| {
            f.select(&records, role)
                .iter()
                .filter(|r| r.informative && label.map_or(true, |l| r.label == l))
                .count()
        })
    );
    let leaks = leak_violations(&records, &folds);
    println!("leak check: {} violations", leaks.len());
    for l in &leaks {
        println!("  {l}");
    }
    println!("folds written to {}", a.out.display());
    if !leaks.is_empty() {
        return Err(Error::Config("fold split leaks patients across roles".into()).into());
    }
    Ok(())
}

fn fold_by_index(folds: &[FoldSplit], k: u64) -> CliResult<&FoldSplit> {
    folds.iter().find(|f| f.fold as u64 == k).ok_or_else(|| {
        CliError::Runtime(Error::Config(format!(
            "fold {k} not found (file has folds {:?})",
            folds.iter().map(|f| f.fold).collect::<Vec<_>>()
        )))
    })
}

fn informative_split(records: &[FrameRecord], fold: &FoldSplit, role: Role) -> Vec<FrameRecord> {
    let selected: Vec<FrameRecord> = fold.select(records, role).into_iter().cloned().collect();
    let (kept, warned) = filter_informative(&selected);
    for p in warned {
        eprintln!("warning: patient {p} has no informative frames in the {role} split");
    }
    kept
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut layered = Layered::new()
        .section("train", &TrainConfig::default())
        .section("model", &ModelConfig::default());
    let cfg_err = |e: Error| usage(e.to_string());
    if let Some(path) = &a.config {
        for (k, v) in read_kv(path)? {
            layered.set(&k, &v, Source::File).map_err(cfg_err)?;
        }
    }
    if let Some(h) = a.head {
        layered.set("head", HeadKind::from(h).as_str(), Source::Flag).map_err(cfg_err)?;
    }
    if let Some(n) = a.max_iterations {
        layered.set("max_iterations", &n.to_string(), Source::Flag).map_err(cfg_err)?;
    }
    if let Some(s) = a.seed {
        layered.set("seed", &s.to_string(), Source::Flag).map_err(cfg_err)?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        layered.set(k.trim(), v.trim(), Source::Flag).map_err(cfg_err)?;
    }
    let train_cfg: TrainConfig = layered.get("train").map_err(cfg_err)?;
    let model_cfg: ModelConfig = layered.get("model").map_err(cfg_err)?;
    train_cfg.validate().map_err(cfg_err)?;
    model_cfg.validate().map_err(cfg_err)?;
    let threads = thread_count()?;
    println!("effective configuration (flag > file > default):");
    print!("{}", layered.describe());

    let records = load_manifest(&a.manifest)?;
    let folds = load_folds(&a.folds_file)?;
    let fold = fold_by_index(&folds, a.fold)?;
    let dir = manifest_dir(&a.manifest);
    let train_records = informative_split(&records, fold, Role::Train);
    let val_records = informative_split(&records, fold, Role::Val);
    if train_records.is_empty() {
        return Err(Error::Empty(format!("fold {} has an empty training split", a.fold)).into());
    }
    let train_set = FrameSet::load(&train_records, &dir, model_cfg.input_size)?;
    let val_set = FrameSet::load(&val_records, &dir, model_cfg.input_size)?;
    println!(
        "fold {}: {} training frames, {} validation frames",
        a.fold,
        train_set.len(),
        val_set.len()
    );

    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config != model_cfg {
                return Err(usage("--resume checkpoint was trained with a different model configuration"));
            }
            Trainer::resume(&ckpt, Some(train_cfg.clone()))?
        }
        None => Trainer::new(Model::build(model_cfg.clone())?, train_cfg.clone(), train_set.len())?,
    };
    trainer.threads = threads;
    mkdir(&a.out)?;
    write(&a.out.join("config.txt"), &layered.describe())?;
    let sides = if model_cfg.head == HeadKind::CamDs { model_cfg.num_resolutions } else { 0 };
    let mut history = TrainHistory::new(sides);
    let report_every = train_cfg.val_interval.max(1);
    trainer.run(&train_set, Some(&val_set), Some(&a.out), &mut history, |row| {
        if row.iteration % report_every == 0 || row.val_accuracy.is_some() {
            let val = row.val_accuracy.map_or(String::new(), |v| format!(" val_accuracy {v:.4}"));
            println!(
                "iteration {} lr {} loss {:.5}{}",
                row.iteration, row.lr, row.loss_total, val
            );
        }
    })?;
    write(&a.out.join("history.csv"), &history.to_csv())?;
    let ckpt = trainer.checkpoint();
    let final_path = a.out.join("final.ckpt");
    ckpt.save(&final_path)?;
    println!("checkpoint: {}", final_path.display());
    println!("checkpoint digest: {}", ckpt.digest());
    Ok(())
}

fn metrics_csv(fold: u64, m: &Metrics) -> String {
    let report = fold_report(&[(format!("fold_{fold}"), *m)]).expect("one fold");
    report.to_csv()
}

pub fn eval(a: EvalArgs) -> CliResult {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage("--threshold must be in [0, 1]"));
    }
    let threads = thread_count()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = Model::<f32>::from_checkpoint(&ckpt)?;
    let records = load_manifest(&a.manifest)?;
    let folds = load_folds(&a.folds_file)?;
    let fold = fold_by_index(&folds, a.fold)?;
    let role = match a.split {
        SplitRole::Train => Role::Train,
        SplitRole::Val => Role::Val,
        SplitRole::Test => Role::Test,
    };
    let selected = informative_split(&records, fold, role);
    if selected.is_empty() {
        return Err(Error::Empty(format!(
            "fold {} has no informative frames in its {role} split",
            a.fold
        ))
        .into());
    }
    let set = FrameSet::load(&selected, &manifest_dir(&a.manifest), model.config().input_size)?;
    let probs = predict(&model, &set, 64, threads)?;
    let rows: Vec<PredictionRow> = selected
        .iter()
        .zip(&probs)
        .map(|(r, &p)| PredictionRow {
            patient_id: r.patient_id.clone(),
            frame_index: r.frame_index,
            prob: p,
            label: r.label.class(),
        })
        .collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let counts = confusion(&probs, &labels, a.threshold)?;
    let m = metrics(&counts);
    let patients = patient_predictions(&rows, a.threshold)?;
    let failures = patient_failures(&patients);

    mkdir(&a.out)?;
    write(&a.out.join("predictions.csv"), &predictions_to_string(&rows))?;
    write(&a.out.join("metrics.csv"), &metrics_csv(a.fold, &m))?;
    let mut pcsv = String::from("patient_id,frames,aggregate,predicted,truth\n");
    for p in &patients {
        writeln!(
            pcsv,
            "{},{},{},{},{}",
            p.patient_id,
            p.frame_probs.len(),
            p.aggregate,
            p.predicted,
            p.truth
        )
        .unwrap();
    }
    write(&a.out.join("patients.csv"), &pcsv)?;
    let mut fcsv = String::from("patient_id,aggregate,kind\n");
    for f in &failures {
        writeln!(fcsv, "{},{},{}", f.patient_id, f.aggregate, f.kind.as_str()).unwrap();
    }
    write(&a.out.join("failures.csv"), &fcsv)?;

    println!("split: fold {} {role}, {} frames, {} patients", a.fold, rows.len(), patients.len());
    println!(
        "confusion: tp {} fp {} tn {} fn {}",
        counts.tp, counts.fp, counts.tn, counts.fn_
    );
    for (name, v) in Metrics::NAMES.iter().zip(m.values()) {
        println!("{name}: {}", fmt_value(v));
    }
    let correct = patients.len() - failures.len();
    println!("patients correct: {correct}/{}", patients.len());
    for f in &failures {
        println!(
            "  patient failure {} ({}, aggregate {:.4})",
            f.patient_id,
            f.kind.as_str(),
            f.aggregate
        );
    }
    Ok(())
}

pub fn roc(a: RocArgs) -> CliResult {
    if a.operating_sens.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(usage("--operating-sens values must be in [0, 1]"));
    }
    let mut pooled = Vec::new();
    for path in &a.predictions {
        let rows = load_predictions(path)?;
        println!("{}: {} frames", path.display(), rows.len());
        pooled.extend(rows);
    }
    println!("pooled: {} frames", pooled.len());
    let probs: Vec<f64> = pooled.iter().map(|r| r.prob).collect();
    let labels: Vec<usize> = pooled.iter().map(|r| r.label).collect();
    let curve = roc_curve(&probs, &labels)?;
    let area = auc(&curve)?;
    mkdir(&a.out)?;
    write(&a.out.join("roc.csv"), &roc_to_csv(&curve))?;
    let size = 256;
    crate::data::image::write_pgm(&a.out.join("roc.pgm"), size, size, &render_roc_pgm(&curve, size))?;
    println!("AUC: {area}");
    let mut ops = String::from("target_sensitivity,threshold,sensitivity,specificity\n");
    for &s in &a.operating_sens {
        let op = operating_point(&curve, s)?;
        println!(
            "operating point @ sensitivity {s}: threshold {} sensitivity {} specificity {}",
            op.threshold, op.sensitivity, op.specificity
        );
        writeln!(ops, "{s},{},{},{}", op.threshold, op.sensitivity, op.specificity).unwrap();
    }
    write(&a.out.join("operating_points.csv"), &ops)?;
    Ok(())
}

fn is_positive(label: &str) -> bool {
    matches!(label, "abnormal" | "1")
}

fn load_gold(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path.display().to_string(), "line 1", e.to_string()))?;
    if !header.iter().eq(["item", "label"]) {
        return Err(Error::parse(path.display().to_string(), "line 1", "header must be exactly item,label").into());
    }
    let mut gold = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path.display().to_string(), format!("line {line}"), e.to_string())
        })?;
        gold.insert(rec[0].to_string(), rec[1].trim().to_string());
    }
    Ok(gold)
}

pub fn agreement(a: AgreementArgs) -> CliResult {
    let matrix = RatingMatrix::load(&a.ratings)?;
    let alpha = krippendorff_alpha(&matrix)?;
    println!(
        "raters: {}, items: {}, labels: {:?}",
        matrix.raters.len(),
        matrix.items.len(),
        matrix.alphabet()
    );
    if alpha.is_nan() {
        println!("krippendorff_alpha: NaN (undefined: all pairable ratings share one label)");
    } else {
        println!("krippendorff_alpha: {alpha}");
    }
    if let Some(gold_path) = &a.gold {
        let gold = load_gold(gold_path)?;
        println!("rater,n,sensitivity,specificity,accuracy,f1");
        for (rater, row) in matrix.raters.iter().zip(&matrix.ratings) {
            let mut probs = Vec::new();
            let mut labels = Vec::new();
            for (item, rating) in matrix.items.iter().zip(row) {
                if let (Some(r), Some(g)) = (rating, gold.get(item)) {
                    probs.push(if is_positive(r) { 1.0 } else { 0.0 });
                    labels.push(is_positive(g) as usize);
                }
            }
            if probs.is_empty() {
                println!("{rater},0,NaN,NaN,NaN,NaN");
                continue;
            }
            let m = metrics(&confusion(&probs, &labels, 0.5)?);
            println!(
                "{rater},{},{},{},{},{}",
                probs.len(),
                fmt_value(m.sensitivity),
                fmt_value(m.specificity),
                fmt_value(m.accuracy),
                fmt_value(m.f1)
            );
        }
    }
    Ok(())
}

pub fn cam(a: CamArgs) -> CliResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut model = Model::<f32>::from_checkpoint(&ckpt)?;
    let available = model.cam_resolutions();
    let res = a.resolution as usize - 1;
    if !available.contains(&res) {
        return Err(usage(format!(
            "--resolution {} has no activation map in this model (available: {:?})",
            a.resolution,
            available.iter().map(|t| t + 1).collect::<Vec<_>>()
        )));
    }
    let class = match a.class {
        ClassArg::Normal => NORMAL,
        ClassArg::Abnormal => ABNORMAL,
    };
    let size = model.config().input_size;
    let frame = prepare_frame(&load_image(&a.image)?, size)?;
    let batch = Tensor::new([1, 3, size, size], frame.data().to_vec())?;
    let fwd = model.forward(&batch, Mode::Eval)?;
    let raw = fwd.cam(res, class, 0)?;
    let positive = fwd.positive_cam(res, class, 0)?;
    let side_index = fwd
        .output
        .sides
        .iter()
        .position(|s| s.resolution == res)
        .expect("resolution checked above");
    let side_score = fwd.side_scores(0)?[side_index][class];
    let gap = raw.data().iter().map(|&v| v as f64).sum::<f64>() / raw.len() as f64;

    mkdir(&a.out)?;
    let name = match a.class {
        ClassArg::Normal => "normal",
        ClassArg::Abnormal => "abnormal",
    };
    let heat_path = a.out.join(format!("cam_t{}_{name}.pgm", a.resolution));
    let overlay_path = a.out.join(format!("cam_t{}_{name}_overlay.ppm", a.resolution));
    let heat = export_cam(&frame, &positive, &heat_path, (!a.no_overlay).then_some(overlay_path.as_path()))?;
    let heat_mean = heat.iter().map(|&v| v as f64).sum::<f64>() / heat.len() as f64;
    println!("map size: {:?}", raw.shape());
    println!("side score: {side_score}");
    println!("mean of activation map: {gap}");
    println!("|mean - side score|: {:e}", (gap - side_score as f64).abs());
    println!("positive map max: {}", positive.max());
    println!("heatmap mean (0-255): {heat_mean}");
    println!("probability abnormal: {}", fwd.predict_proba()[0]);
    println!("heatmap: {}", heat_path.display());
    if !a.no_overlay {
        println!("overlay: {}", overlay_path.display());
    }
    Ok(())
}

fn read_fold_metrics(path: &Path) -> CliResult<(String, Metrics)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.len() < 2 || header[0] != "measure" {
        return Err(Error::parse(&name, "line 1", "expected a metrics table with a measure column").into());
    }
    let mut values = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let v: f64 = cells
            .get(1)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::parse(&name, format!("line {}", i + 2), "missing value"))?;
        values.insert(cells[0].to_string(), v);
    }
    let get = |k: &str| {
        values
            .get(k)
            .copied()
            .ok_or_else(|| CliError::Runtime(Error::parse(&name, "table", format!("missing measure {k}"))))
    };
    Ok((
        header[1].to_string(),
        Metrics {
            sensitivity: get("sensitivity")?,
            specificity: get("specificity")?,
            accuracy: get("accuracy")?,
            f1: get("f1")?,
        },
    ))
}

pub fn report(a: ReportArgs) -> CliResult {
    let mut folds = Vec::new();
    for p in &a.metrics {
        folds.push(read_fold_metrics(p)?);
    }
    let table = fold_report(&folds)?.to_csv();
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    write(&a.out, &table)?;
    print!("{table}");
    Ok(())
}
