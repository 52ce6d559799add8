use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PREDICTIONS_HEADER: [&str; 4] = ["patient_id", "frame_index", "prob", "label"];

/// One frame prediction; `label` is the class index (1 = abnormal).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub patient_id: String,
    pub frame_index: u32,
    pub prob: f64,
    pub label: usize,
}

pub fn predictions_to_string(rows: &[PredictionRow]) -> String {
    let mut out = PREDICTIONS_HEADER.join(",");
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.patient_id, r.frame_index, r.prob, r.label).unwrap();
    }
    out
}

/// Labels may be `0`/`1` or `normal`/`abnormal`.
pub fn parse_predictions(text: &str, source_name: &str) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let err = |line: u64, msg: String| Error::parse(source_name, format!("line {line}"), msg);
    let mut records = reader.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(PREDICTIONS_HEADER) => {}
        Some(Err(e)) => return Err(err(1, e.to_string())),
        _ => {
            return Err(err(
                1,
                format!("header must be exactly {}", PREDICTIONS_HEADER.join(",")),
            ))
        }
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let frame_index = rec[1]
            .parse()
            .map_err(|_| err(line, format!("bad frame_index {:?}", &rec[1])))?;
        let prob: f64 = rec[2]
            .parse()
            .ok()
            .filter(|p| (0.0..=1.0).contains(p))
            .ok_or_else(|| err(line, format!("prob {:?} is not a number in [0, 1]", &rec[2])))?;
        let label = match &rec[3] {
            "0" | "normal" => 0,
            "1" | "abnormal" => 1,
            other => return Err(err(line, format!("unknown label {other:?}"))),
        };
        rows.push(PredictionRow {
            patient_id: rec[0].to_string(),
            frame_index,
            prob,
            label,
        });
    }
    Ok(rows)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, &path.display().to_string())
}
