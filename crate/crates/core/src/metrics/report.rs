use crate::error::{Error, Result};
use crate::metrics::{fmt_value, Metrics};

/// Measures as rows, one column per fold plus the unweighted average.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub folds: Vec<String>,
    pub per_fold: Vec<Metrics>,
    pub average: Metrics,
}

impl FoldReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure");
        for f in &self.folds {
            out.push(',');
            out.push_str(f);
        }
        out.push_str(",average\n");
        let avg = self.average.values();
        for (m, name) in Metrics::NAMES.iter().enumerate() {
            out.push_str(name);
            for fold in &self.per_fold {
                out.push(',');
                out.push_str(&fmt_value(fold.values()[m]));
            }
            out.push(',');
            out.push_str(&fmt_value(avg[m]));
            out.push('\n');
        }
        out
    }
}

/// Per-fold metrics plus their arithmetic mean. A NaN in any fold makes
/// that measure's average NaN.
pub fn fold_report(folds: &[(String, Metrics)]) -> Result<FoldReport> {
    if folds.is_empty() {
        return Err(Error::Empty("fold report needs at least one fold".into()));
    }
    let n = folds.len() as f64;
    let mean = |m: usize| folds.iter().map(|(_, x)| x.values()[m]).sum::<f64>() / n;
    Ok(FoldReport {
        folds: folds.iter().map(|(f, _)| f.clone()).collect(),
        per_fold: folds.iter().map(|(_, m)| *m).collect(),
        average: Metrics {
            sensitivity: mean(0),
            specificity: mean(1),
            accuracy: mean(2),
            f1: mean(3),
        },
    })
}

/// One row per model variant: `model,sensitivity,specificity,accuracy,f1`.
pub fn comparison_table(rows: &[(String, Metrics)]) -> String {
    let mut out = String::from("model,sensitivity,specificity,accuracy,f1\n");
    for (name, m) in rows {
        out.push_str(name);
        for v in m.values() {
            out.push(',');
            out.push_str(&fmt_value(v));
        }
        out.push('\n');
    }
    out
}
