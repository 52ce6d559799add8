use camds::data::image::*;
use camds::tensor::Tensor;

#[test]
fn decodes_known_ppm() {
    let bytes = encode_pnm(2, 2, 3, &[0, 51, 102, 153, 204, 255, 1, 2, 3, 4, 5, 6]);
    let t = raster_to_tensor(&decode_pnm(&bytes, "t").unwrap());
    assert_eq!(t.shape(), &[3, 2, 2]);
    // channel 0 holds the first sample of each pixel
    let expect_r = [0.0, 153.0, 1.0, 4.0].map(|v: f32| v / 255.0);
    assert_eq!(&t.data()[..4], &expect_r);
    assert_eq!(t.data()[4], 51.0 / 255.0);
}

#[test]
fn header_comments_are_skipped() {
    let mut bytes = b"P5\n# made by hand\n2 1\n# max\n255\n".to_vec();
    bytes.extend_from_slice(&[10, 20]);
    let r = decode_pnm(&bytes, "t").unwrap();
    assert_eq!((r.width, r.height, r.samples.clone()), (2, 1, vec![10, 20]));
}

#[test]
fn grayscale_is_replicated() {
    let r = decode_pnm(&encode_pnm(1, 1, 1, &[255]), "t").unwrap();
    assert_eq!(raster_to_tensor(&r).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn malformed_inputs_are_rejected() {
    assert!(decode_pnm(b"P3\n1 1\n255\n0 0 0", "t").is_err());
    assert!(decode_pnm(b"P6\n2 2\n255\n\x01\x02", "t").is_err());
    assert!(decode_pnm(b"P5\nx 2\n255\n", "t").is_err());
    assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00", "t").is_err());
    let err = decode_pnm(b"P6\n2 2\n255\n\x01\x02", "img").unwrap_err();
    assert!(err.to_string().contains("truncated"));
}

#[test]
fn resize_to_own_width_is_identity() {
    let t = Tensor::from_fn([3, 5, 7], |i| (i % 13) as f32 / 13.0);
    assert_eq!(resize_width(&t, 7).unwrap(), t);
}

#[test]
fn downscale_and_crop_extents() {
    let t = Tensor::from_fn([3, 256, 512], |i| (i % 255) as f32 / 255.0);
    let r = resize_width(&t, 256).unwrap();
    assert_eq!(r.shape(), &[3, 128, 256]);
    let c = center_crop_square(&r).unwrap();
    assert_eq!(c.shape(), &[3, 128, 128]);
}

#[test]
fn halving_averages_pixel_pairs() {
    let t = Tensor::new([1, 2, 4], vec![0.0, 1.0, 0.5, 0.5, 0.0, 1.0, 0.5, 0.5]).unwrap();
    let r = resize_width(&t, 2).unwrap();
    assert_eq!(r.shape(), &[1, 1, 2]);
    assert!(r.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
}

#[test]
fn prepare_frame_produces_square_input() {
    let landscape = Tensor::from_fn([3, 40, 80], |_| 0.5);
    assert_eq!(prepare_frame(&landscape, 32).unwrap().shape(), &[3, 32, 32]);
    let portrait = Tensor::from_fn([3, 90, 45], |_| 0.5);
    assert_eq!(prepare_frame(&portrait, 32).unwrap().shape(), &[3, 32, 32]);
}

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use camds::data::folds::{folds_to_string, parse_folds};
use camds::data::manifest::manifest_to_string;
use camds::data::synth::stroke_density;
use camds::data::*;
use camds::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HEADER: &str = "patient_id,frame_index,path,label,informative\n";

fn record(p: &str, f: u32, label: Label, informative: bool) -> FrameRecord {
    FrameRecord {
        patient_id: p.into(),
        frame_index: f,
        path: PathBuf::from(format!("frames/{p}/f{f:03}.ppm")),
        label,
        informative,
    }
}

fn parse_error_location(e: Error) -> String {
    match e {
        Error::Parse { location, .. } => location,
        other => panic!("expected parse error, got {other}"),
    }
}

#[test]
fn image_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Tensor::from_fn([3, 5, 7], |_| rng.gen_range(0..=255u8) as f32 / 255.0);
    let path = dir.path().join("x.ppm");
    save_image(&path, &t).unwrap();
    assert_eq!(load_image(&path).unwrap(), t);
}

#[test]
fn header_only_manifest_is_empty() {
    assert!(parse_manifest(HEADER, "m").unwrap().is_empty());
    assert!(parse_manifest("", "m").is_err());
    assert!(parse_manifest("patient_id,frame_index,path,label\n", "m").is_err());
}

#[test]
fn manifest_round_trip() {
    let records = vec![
        record("a", 0, Label::Normal, true),
        record("a", 1, Label::Normal, false),
        record("b,c", 0, Label::Abnormal, true),
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    save_manifest(&records, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), records);
}

#[test]
fn large_manifest_reports_first_duplicate_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut records: Vec<FrameRecord> = (0..10_000)
        .map(|i| {
            let label = if rng.gen_bool(0.5) { Label::Normal } else { Label::Abnormal };
            record(&format!("p{}", i / 50), (i % 50) as u32, label, rng.gen_bool(0.9))
        })
        .collect();
    let text = manifest_to_string(&records);
    let start = Instant::now();
    assert_eq!(parse_manifest(&text, "m").unwrap().len(), 10_000);
    eprintln!("10k-row manifest parsed in {:?}", start.elapsed());

    // Record 7000 duplicates record 123; record 9000 duplicates record 5.
    records[7000] = records[123].clone();
    records[9000] = records[5].clone();
    let loc = parse_error_location(parse_manifest(&manifest_to_string(&records), "m").unwrap_err());
    assert_eq!(loc, "line 7002");
}

#[test]
fn malformed_rows_name_their_line() {
    let cases = [
        (format!("{HEADER}a,0,x.ppm,normal,true\na,1,x.ppm,normal\n"), "line 3"),
        (format!("{HEADER}a,0,x.ppm,sick,true\n"), "line 2"),
        (format!("{HEADER}a,0,x.ppm,normal,true\nb,-1,y.ppm,normal,true\n"), "line 3"),
        (format!("{HEADER}a,0,x.ppm,normal,yes\n"), "line 2"),
    ];
    for (text, line) in cases {
        assert_eq!(parse_error_location(parse_manifest(&text, "m").unwrap_err()), line);
    }
    let msg = parse_manifest(&format!("{HEADER}a,0,x.ppm,sick,true\n"), "m").unwrap_err().to_string();
    assert!(msg.contains("sick"));
    let msg = parse_manifest(&format!("{HEADER}a,0,x.ppm\n"), "m").unwrap_err().to_string();
    assert!(msg.contains("label"));
}

fn labels(n: usize) -> BTreeMap<String, Label> {
    (0..n)
        .map(|i| (format!("p{i:03}"), if i % 3 == 0 { Label::Abnormal } else { Label::Normal }))
        .collect()
}

#[test]
fn fold_sizes_follow_floor_rule() {
    for (n, expect) in [(114, (91, 11, 12)), (10, (8, 1, 1))] {
        let folds = split_folds(&labels(n), 5, SplitRatios::default(), 0, false).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), expect);
        }
    }
}

#[test]
fn folds_partition_patients_for_any_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let n = rng.gen_range(10..150);
        let k = rng.gen_range(1..=5);
        let stratify = rng.gen_bool(0.5);
        let all = labels(n);
        let folds = split_folds(&all, k, SplitRatios::default(), rng.gen(), stratify).unwrap();
        for f in &folds {
            assert!(f.train.is_disjoint(&f.val) && f.train.is_disjoint(&f.test) && f.val.is_disjoint(&f.test));
            let union: BTreeSet<&String> = f.train.iter().chain(&f.val).chain(&f.test).collect();
            assert_eq!(union, all.keys().collect());
            if !stratify {
                assert_eq!(f.train.len(), (0.8 * n as f64 + 1e-9).floor() as usize);
            }
        }
    }
}

#[test]
fn folds_are_deterministic_and_independent() {
    let a = split_folds(&labels(40), 5, SplitRatios::default(), 9, false).unwrap();
    let b = split_folds(&labels(40), 5, SplitRatios::default(), 9, false).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].test, a[1].test);
    let c = split_folds(&labels(40), 5, SplitRatios::default(), 10, false).unwrap();
    assert_ne!(a, c);
}

#[test]
fn stratified_folds_keep_both_classes_in_test() {
    let all = labels(40);
    for f in split_folds(&all, 5, SplitRatios::default(), 1, true).unwrap() {
        let classes: BTreeSet<Label> = f.test.iter().map(|p| all[p]).collect();
        assert_eq!(classes.len(), 2);
    }
}

#[test]
fn fold_errors() {
    let bad = SplitRatios { train: 0.8, val: 0.1, test: 0.2 };
    assert!(matches!(split_folds(&labels(20), 2, bad, 0, false), Err(Error::Config(_))));
    assert!(split_folds(&labels(9), 5, SplitRatios::default(), 0, false).is_err());
    assert!(split_folds(&labels(10), 0, SplitRatios::default(), 0, false).is_err());
}

#[test]
fn fold_file_round_trip_and_leak_check() {
    let all = labels(30);
    let folds = split_folds(&all, 3, SplitRatios::default(), 4, false).unwrap();
    let back = parse_folds(&folds_to_string(&folds), "f").unwrap();
    for (x, y) in folds.iter().zip(&back) {
        assert_eq!((x.fold, &x.train, &x.val, &x.test), (y.fold, &y.train, &y.val, &y.test));
    }
    let records: Vec<FrameRecord> = all
        .iter()
        .flat_map(|(p, &l)| (0..3).map(move |f| record(p, f, l, true)))
        .collect();
    assert!(leak_violations(&records, &folds).is_empty());
    let counts = fold_counts(&records, &folds);
    assert_eq!(counts[0], (1, Role::Train, 24, 72));

    let mut leaky = folds.clone();
    let moved = leaky[0].test.iter().next().unwrap().clone();
    leaky[0].train.insert(moved);
    assert_eq!(leak_violations(&records, &leaky).len(), 1);

    let dup = "fold,role,patient_id\n1,train,a\n1,test,a\n";
    assert_eq!(parse_error_location(parse_folds(dup, "f").unwrap_err()), "line 3");
}

#[test]
fn filter_informative_cases() {
    let all: Vec<FrameRecord> = (0..4).map(|f| record("a", f, Label::Normal, true)).collect();
    assert_eq!(filter_informative(&all), (all.clone(), vec![]));

    let none: Vec<FrameRecord> = ["b", "a"].iter().map(|p| record(p, 0, Label::Normal, false)).collect();
    assert_eq!(filter_informative(&none), (vec![], vec!["a".to_string(), "b".to_string()]));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mixed: Vec<FrameRecord> = (0..1000)
        .map(|i| record(&format!("p{}", i % 37), i, Label::Normal, rng.gen_bool(0.3)))
        .collect();
    let (kept, _) = filter_informative(&mixed);
    let mut recount = 0;
    for r in &mixed {
        if r.informative {
            recount += 1;
        }
    }
    assert_eq!(kept.len(), recount);
    assert!(kept.iter().all(|r| r.informative));
}

#[test]
fn clips_share_one_label() {
    let mut records = vec![
        record("b", 2, Label::Abnormal, true),
        record("a", 0, Label::Normal, true),
        record("b", 1, Label::Abnormal, true),
    ];
    let clips = patient_clips(&records).unwrap();
    assert_eq!(clips.len(), 2);
    assert_eq!(clips[1].frames.iter().map(|f| f.frame_index).collect::<Vec<_>>(), vec![1, 2]);
    records.push(record("a", 5, Label::Abnormal, true));
    assert!(patient_labels(&records).is_err());
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        patients_per_class: 3,
        min_frames: 2,
        max_frames: 4,
        image_size: 32,
        region_size: 12,
        tangle_length: 20,
        uninformative_fraction: 0.2,
        ..SyntheticSpec::default()
    }
}

fn list_files(dir: &std::path::Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(list_files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn zero_patient_corpus_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { patients_per_class: 0, ..small_spec() };
    let corpus = generate_synthetic(&spec, dir.path()).unwrap();
    assert!(corpus.records.is_empty());
    assert_eq!(list_files(dir.path()), vec![corpus.manifest_path.clone()]);
    assert!(load_manifest(&corpus.manifest_path).unwrap().is_empty());
}

#[test]
fn synthetic_corpus_is_byte_identical_per_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = generate_synthetic(&small_spec(), a.path()).unwrap();
    let cb = generate_synthetic(&small_spec(), b.path()).unwrap();
    assert_eq!(ca.digest, cb.digest);
    let fa = list_files(a.path());
    let fb = list_files(b.path());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let cc = generate_synthetic(&SyntheticSpec { seed: 8, ..small_spec() }, c.path()).unwrap();
    assert_ne!(ca.digest, cc.digest);
}

#[test]
fn synthetic_corpus_structure() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic(&small_spec(), dir.path()).unwrap();
    let records = load_manifest(&corpus.manifest_path).unwrap();
    assert_eq!(records, corpus.records);
    let labels = patient_labels(&records).unwrap();
    assert_eq!(labels.values().filter(|&&l| l == Label::Abnormal).count(), 3);
    assert_eq!(labels.len(), 6);
    let mut masks = 0;
    for r in &records {
        let path = resolve_path(dir.path(), r);
        let has_mask = mask_path(&path).exists();
        assert_eq!(has_mask, r.informative && r.label == Label::Abnormal, "{path:?}");
        masks += has_mask as usize;
    }
    assert_eq!(masks, corpus.masks);
}

#[test]
fn abnormal_regions_are_denser_than_normal_frames() {
    use camds::data::image::read_raster;
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { patients_per_class: 4, min_frames: 10, max_frames: 10, ..SyntheticSpec::default() };
    let corpus = generate_synthetic(&spec, dir.path()).unwrap();
    let (mut inside, mut n_in, mut normal, mut n_norm) = (0.0, 0, 0.0, 0);
    for r in &corpus.records {
        let path = resolve_path(dir.path(), r);
        let raster = read_raster(&path).unwrap();
        match r.label {
            Label::Abnormal => {
                let mask = read_raster(&mask_path(&path)).unwrap();
                inside += stroke_density(&raster, Some(&mask));
                n_in += 1;
            }
            Label::Normal => {
                normal += stroke_density(&raster, None);
                n_norm += 1;
            }
        }
    }
    let (inside, normal) = (inside / n_in as f64, normal / n_norm as f64);
    eprintln!("stroke density: abnormal region {inside:.4}, normal frame {normal:.4}");
    assert!(inside > 2.0 * normal);
}

#[test]
fn frame_set_batches_with_transform() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { uninformative_fraction: 0.0, ..small_spec() };
    let corpus = generate_synthetic(&spec, dir.path()).unwrap();
    let set = FrameSet::load(&corpus.records, dir.path(), 32).unwrap();
    assert_eq!(set.len(), corpus.records.len());
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    let idx = &order[..3];
    let mut calls = 0;
    let (batch, classes) = set
        .batch::<f32>(idx, |_| calls += 1)
        .unwrap();
    assert_eq!(calls, 3);
    assert_eq!(batch.shape(), &[3, 3, 32, 32]);
    for (k, &i) in idx.iter().enumerate() {
        assert_eq!(classes[k], set.class(i));
        assert_eq!(&batch.data()[k * 3072..(k + 1) * 3072], set.frame(i));
    }
    assert!(set.batch::<f32>(&[set.len()], |_| {}).is_err());
}
