use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Raters × items grid of nominal labels; `None` marks a missing rating.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatingMatrix {
    pub raters: Vec<String>,
    pub items: Vec<String>,
    pub ratings: Vec<Vec<Option<String>>>,
}

impl RatingMatrix {
    pub fn new(raters: Vec<String>, items: Vec<String>, ratings: Vec<Vec<Option<String>>>) -> Result<Self> {
        if ratings.len() != raters.len() || ratings.iter().any(|r| r.len() != items.len()) {
            return Err(Error::Shape(format!(
                "rating grid must be {} raters × {} items",
                raters.len(),
                items.len()
            )));
        }
        Ok(RatingMatrix {
            raters,
            items,
            ratings,
        })
    }

    /// Anonymous raters/items from a grid.
    pub fn from_grid(ratings: Vec<Vec<Option<String>>>) -> Result<Self> {
        let items = ratings.first().map_or(0, |r| r.len());
        Self::new(
            (1..=ratings.len()).map(|i| format!("rater{i}")).collect(),
            (1..=items).map(|i| format!("item{i}")).collect(),
            ratings,
        )
    }

    /// Distinct labels in sorted order.
    pub fn alphabet(&self) -> Vec<&str> {
        let mut a: Vec<&str> = self
            .ratings
            .iter()
            .flatten()
            .flatten()
            .map(String::as_str)
            .collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    /// CSV with a header row `rater,<item>,...` and one row per rater;
    /// empty cells are missing ratings.
    pub fn parse_csv(text: &str, source_name: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        let err = |line: u64, msg: String| Error::parse(source_name, format!("line {line}"), msg);
        let mut rows = reader.records();
        let header = match rows.next() {
            Some(h) => h.map_err(|e| err(1, e.to_string()))?,
            None => return Err(err(1, "missing header row".into())),
        };
        if header.len() < 2 {
            return Err(err(1, "header needs a rater column and at least one item".into()));
        }
        let items: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut raters = Vec::new();
        let mut ratings = Vec::new();
        for row in rows {
            let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            raters.push(row[0].to_string());
            ratings.push(
                row.iter()
                    .skip(1)
                    .map(|c| {
                        let c = c.trim();
                        (!c.is_empty()).then(|| c.to_string())
                    })
                    .collect(),
            );
        }
        Self::new(raters, items, ratings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }
}

/// Krippendorff's alpha for nominal data.
///
/// Each item with `m ≥ 2` ratings contributes every ordered pair of its
/// ratings to the coincidence matrix with weight `1 / (m − 1)`; then
/// `α = 1 − (n − 1) · Σ_{c≠k} o_ck / Σ_{c≠k} n_c n_k`. Returns NaN when
/// all pairable ratings share one label (no expected disagreement).
pub fn krippendorff_alpha(matrix: &RatingMatrix) -> Result<f64> {
    let alphabet = matrix.alphabet();
    let index: BTreeMap<&str, usize> = alphabet.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let v = alphabet.len();
    let mut o = vec![0.0f64; v * v];
    let mut pairable = 0;
    let mut counts = vec![0usize; v];
    for item in 0..matrix.items.len() {
        counts.fill(0);
        let mut m = 0;
        for rater in &matrix.ratings {
            if let Some(label) = &rater[item] {
                counts[index[label.as_str()]] += 1;
                m += 1;
            }
        }
        if m < 2 {
            continue;
        }
        pairable += 1;
        let w = 1.0 / (m - 1) as f64;
        for c in 0..v {
            for k in 0..v {
                let pairs = if c == k {
                    counts[c] * counts[c].saturating_sub(1)
                } else {
                    counts[c] * counts[k]
                };
                o[c * v + k] += pairs as f64 * w;
            }
        }
    }
    if pairable == 0 {
        return Err(Error::Empty(
            "no item has two or more ratings; alpha needs pairable values".into(),
        ));
    }
    let n_c: Vec<f64> = (0..v).map(|c| (0..v).map(|k| o[c * v + k]).sum()).collect();
    let n: f64 = n_c.iter().sum();
    let (mut observed, mut expected) = (0.0, 0.0);
    for c in 0..v {
        for k in 0..v {
            if c != k {
                observed += o[c * v + k];
                expected += n_c[c] * n_c[k];
            }
        }
    }
    if expected == 0.0 {
        return Ok(f64::NAN);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}
