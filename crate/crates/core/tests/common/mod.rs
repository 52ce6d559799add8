//! Brute-force oracles shared by the metric and acceptance suites.

use camds::metrics::RatingMatrix;

/// Rank statistic: share of (abnormal, normal) pairs ordered correctly,
/// ties counting one half.
pub fn mann_whitney(probs: &[f64], labels: &[usize]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..probs.len() {
        for j in 0..probs.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if probs[i] > probs[j] {
                    wins += 1.0;
                } else if probs[i] == probs[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Enumerates every ordered pair of pairable values directly.
pub fn alpha_oracle(m: &RatingMatrix) -> f64 {
    let mut values: Vec<&str> = Vec::new();
    let mut disagree = 0.0;
    for item in 0..m.items.len() {
        let vals: Vec<&str> = m.ratings.iter().filter_map(|r| r[item].as_deref()).collect();
        if vals.len() < 2 {
            continue;
        }
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                if i != j && vals[i] != vals[j] {
                    disagree += 1.0 / (vals.len() - 1) as f64;
                }
            }
        }
        values.extend(vals);
    }
    let n = values.len() as f64;
    let mut expected_pairs = 0.0;
    for i in 0..values.len() {
        for j in 0..values.len() {
            if i != j && values[i] != values[j] {
                expected_pairs += 1.0;
            }
        }
    }
    let d_o = disagree / n;
    let d_e = expected_pairs / (n * (n - 1.0));
    1.0 - d_o / d_e
}
