//! Patient-level train/validation/test splits.
//!
//! Every fold is an independent seeded shuffle of the (sorted) patient ids,
//! cut into `floor(r_train·n)` training, `floor(r_val·n)` validation and
//! the remaining test patients. Folds are not a rotation, so test sets of
//! different folds may overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::{FrameRecord, Label};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Val, Role::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(format!("unknown role {other:?} (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be in [0, 1] and sum to 1, got ({}, {}, {})",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// (train, val, test) counts for `n` patients.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon keeps 0.8·10 from flooring to 7.
        let train = (self.train * n as f64 + 1e-9).floor() as usize;
        let val = ((self.val * n as f64 + 1e-9).floor() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    /// 1-based.
    pub fold: usize,
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl FoldSplit {
    pub fn patients(&self, role: Role) -> &BTreeSet<String> {
        match role {
            Role::Train => &self.train,
            Role::Val => &self.val,
            Role::Test => &self.test,
        }
    }

    pub fn role_of(&self, patient: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|&r| self.patients(r).contains(patient))
    }

    /// Records of the patients in `role`, in manifest order.
    pub fn select<'a>(&self, records: &'a [FrameRecord], role: Role) -> Vec<&'a FrameRecord> {
        let set = self.patients(role);
        records.iter().filter(|r| set.contains(&r.patient_id)).collect()
    }
}

fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64);
    rng
}

/// `k` independent splits. With `stratify`, each class is shuffled and cut
/// separately, so class proportions are (approximately) kept per role.
pub fn split_folds(
    patient_labels: &BTreeMap<String, Label>,
    k: usize,
    ratios: SplitRatios,
    seed: u64,
    stratify: bool,
) -> Result<Vec<FoldSplit>> {
    ratios.validate()?;
    if k == 0 {
        return Err(Error::Config("number of folds must be at least 1".into()));
    }
    let n = patient_labels.len();
    if n < 2 * k {
        return Err(Error::Config(format!(
            "{n} patients are too few for {k} folds (need at least {})",
            2 * k
        )));
    }
    let groups: Vec<Vec<&String>> = if stratify {
        [Label::Normal, Label::Abnormal]
            .iter()
            .map(|l| patient_labels.iter().filter(|(_, v)| *v == l).map(|(p, _)| p).collect())
            .collect()
    } else {
        vec![patient_labels.keys().collect()]
    };
    let mut folds = Vec::with_capacity(k);
    for fold in 1..=k {
        let mut rng = fold_rng(seed, fold);
        let mut split = FoldSplit {
            fold,
            seed,
            train: BTreeSet::new(),
            val: BTreeSet::new(),
            test: BTreeSet::new(),
        };
        for group in &groups {
            let mut ids = group.clone();
            ids.shuffle(&mut rng);
            let (train, val, _) = ratios.counts(ids.len());
            for (i, id) in ids.into_iter().enumerate() {
                let set = if i < train {
                    &mut split.train
                } else if i < train + val {
                    &mut split.val
                } else {
                    &mut split.test
                };
                set.insert(id.clone());
            }
        }
        folds.push(split);
    }
    Ok(folds)
}

pub const FOLD_HEADER: [&str; 3] = ["fold", "role", "patient_id"];

pub fn folds_to_string(folds: &[FoldSplit]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FOLD_HEADER).expect("in-memory write");
    for f in folds {
        for role in Role::ALL {
            for p in f.patients(role) {
                w.write_record([f.fold.to_string().as_str(), role.as_str(), p])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn save_folds(folds: &[FoldSplit], path: &Path) -> Result<()> {
    std::fs::write(path, folds_to_string(folds)).map_err(|e| Error::io(path, e))
}

pub fn parse_folds(text: &str, source_name: &str) -> Result<Vec<FoldSplit>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let err = |line: u64, msg: String| Error::parse(source_name, format!("line {line}"), msg);
    let mut rows = reader.records();
    match rows.next() {
        Some(Ok(h)) if h.iter().eq(FOLD_HEADER) => {}
        Some(Err(e)) => return Err(err(1, e.to_string())),
        _ => return Err(err(1, format!("header must be exactly {}", FOLD_HEADER.join(",")))),
    }
    let mut by_fold: BTreeMap<usize, FoldSplit> = BTreeMap::new();
    for row in rows {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let fold: usize = row[0]
            .parse()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| err(line, format!("fold {:?} is not a positive integer", &row[0])))?;
        let role: Role = row[1].parse().map_err(|m| err(line, m))?;
        let split = by_fold.entry(fold).or_insert_with(|| FoldSplit {
            fold,
            seed: 0,
            train: BTreeSet::new(),
            val: BTreeSet::new(),
            test: BTreeSet::new(),
        });
        if let Some(prev) = split.role_of(&row[2]) {
            return Err(err(
                line,
                format!("patient {} appears in both {prev} and {role} of fold {fold}", &row[2]),
            ));
        }
        let set = match role {
            Role::Train => &mut split.train,
            Role::Val => &mut split.val,
            Role::Test => &mut split.test,
        };
        set.insert(row[2].to_string());
    }
    Ok(by_fold.into_values().collect())
}

pub fn load_folds(path: &Path) -> Result<Vec<FoldSplit>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_folds(&text, &path.display().to_string())
}

/// Frame-level leak check: every manifest patient must sit in exactly one
/// role of each fold. Returns one message per violation.
pub fn leak_violations(records: &[FrameRecord], folds: &[FoldSplit]) -> Vec<String> {
    let patients: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let mut out = Vec::new();
    for f in folds {
        for p in &patients {
            let roles: Vec<Role> = Role::ALL
                .into_iter()
                .filter(|&r| f.patients(r).contains(*p))
                .collect();
            if roles.len() != 1 {
                out.push(format!("fold {}: patient {p} assigned to {roles:?}", f.fold));
            }
        }
    }
    out
}

/// Per-fold patient and frame counts as `(fold, role, patients, frames)`.
pub fn fold_counts(records: &[FrameRecord], folds: &[FoldSplit]) -> Vec<(usize, Role, usize, usize)> {
    let mut out = Vec::new();
    for f in folds {
        for role in Role::ALL {
            out.push((f.fold, role, f.patients(role).len(), f.select(records, role).len()));
        }
    }
    out
}
