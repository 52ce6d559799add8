//! Frame manifests: one CSV row per video frame.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ABNORMAL, NORMAL};

pub const MANIFEST_HEADER: [&str; 5] = ["patient_id", "frame_index", "path", "label", "informative"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }

    /// Class index: abnormal is the positive class.
    pub fn class(self) -> usize {
        match self {
            Label::Normal => NORMAL,
            Label::Abnormal => ABNORMAL,
        }
    }

    pub fn from_class(class: usize) -> Result<Self> {
        match class {
            NORMAL => Ok(Label::Normal),
            ABNORMAL => Ok(Label::Abnormal),
            c => Err(Error::Config(format!("class index {c} is not 0 (normal) or 1 (abnormal)"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normal" => Ok(Label::Normal),
            "abnormal" => Ok(Label::Abnormal),
            other => Err(format!("unknown label {other:?} (expected normal or abnormal)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub patient_id: String,
    pub frame_index: u32,
    /// Image path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label: Label,
    pub informative: bool,
}

/// All frames of one patient; every frame carries the clip's label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientClip {
    pub patient_id: String,
    pub label: Label,
    pub frames: Vec<FrameRecord>,
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("informative must be true or false, got {other:?}")),
    }
}

/// Strict parse of manifest CSV text. Errors name the 1-based line.
pub fn parse_manifest(text: &str, source_name: &str) -> Result<Vec<FrameRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let err = |line: u64, msg: String| Error::parse(source_name, format!("line {line}"), msg);
    let header = match rows.next() {
        None => return Err(err(1, "missing header row".into())),
        Some(h) => h.map_err(|e| err(1, e.to_string()))?,
    };
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(err(
            1,
            format!(
                "header must be exactly {}, got {}",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut records = Vec::new();
    let mut seen: HashMap<(String, u32), u64> = HashMap::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != MANIFEST_HEADER.len() {
            let missing = MANIFEST_HEADER.get(row.len()).copied().unwrap_or("none");
            return Err(err(
                line,
                format!(
                    "expected {} columns, found {} (first missing column: {missing})",
                    MANIFEST_HEADER.len(),
                    row.len()
                ),
            ));
        }
        let patient_id = row[0].to_string();
        if patient_id.is_empty() {
            return Err(err(line, "empty patient_id".into()));
        }
        let frame_index: u32 = row[1]
            .parse()
            .map_err(|_| err(line, format!("frame_index {:?} is not a non-negative integer", &row[1])))?;
        if row[2].is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let label = row[3].parse().map_err(|m| err(line, m))?;
        let informative = parse_bool(&row[4]).map_err(|m| err(line, m))?;
        if let Some(first) = seen.insert((patient_id.clone(), frame_index), line) {
            return Err(err(
                line,
                format!("duplicate frame ({patient_id}, {frame_index}), first seen on line {first}"),
            ));
        }
        records.push(FrameRecord {
            patient_id,
            frame_index,
            path: PathBuf::from(&row[2]),
            label,
            informative,
        });
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<FrameRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

pub fn manifest_to_string(records: &[FrameRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.patient_id.as_str(),
            &r.frame_index.to_string(),
            &r.path.to_string_lossy(),
            r.label.as_str(),
            if r.informative { "true" } else { "false" },
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn save_manifest(records: &[FrameRecord], path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    std::io::Write::write_all(&mut f, manifest_to_string(records).as_bytes()).map_err(|e| Error::io(path, e))
}

/// Keeps informative frames. The second value lists patients (sorted) that
/// are left with no frames.
pub fn filter_informative(records: &[FrameRecord]) -> (Vec<FrameRecord>, Vec<String>) {
    let kept: Vec<FrameRecord> = records.iter().filter(|r| r.informative).cloned().collect();
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *remaining.entry(&r.patient_id).or_default() += r.informative as usize;
    }
    let warned = remaining
        .into_iter()
        .filter(|(_, n)| *n == 0)
        .map(|(p, _)| p.to_string())
        .collect();
    (kept, warned)
}

/// Per-patient labels. Errors if a patient's frames disagree.
pub fn patient_labels(records: &[FrameRecord]) -> Result<BTreeMap<String, Label>> {
    let mut labels = BTreeMap::new();
    for r in records {
        match labels.insert(r.patient_id.clone(), r.label) {
            Some(prev) if prev != r.label => {
                return Err(Error::Config(format!(
                    "patient {} has frames labelled both {prev} and {}",
                    r.patient_id, r.label
                )))
            }
            _ => {}
        }
    }
    Ok(labels)
}

/// Groups frames into clips ordered by patient id, frames by index.
pub fn patient_clips(records: &[FrameRecord]) -> Result<Vec<PatientClip>> {
    let labels = patient_labels(records)?;
    let mut clips: BTreeMap<&str, Vec<FrameRecord>> = BTreeMap::new();
    for r in records {
        clips.entry(&r.patient_id).or_default().push(r.clone());
    }
    Ok(clips
        .into_iter()
        .map(|(id, mut frames)| {
            frames.sort_by_key(|f| f.frame_index);
            PatientClip {
                patient_id: id.to_string(),
                label: labels[id],
                frames,
            }
        })
        .collect())
}

/// Resolves a record's path against the manifest's directory.
pub fn resolve_path(manifest_dir: &Path, record: &FrameRecord) -> PathBuf {
    if record.path.is_absolute() {
        record.path.clone()
    } else {
        manifest_dir.join(&record.path)
    }
}
