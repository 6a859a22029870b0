use serde::{Deserialize, Serialize};

use super::formats::PairSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Precision, recall and F1 of `predicted` against `gold`. An empty
/// prediction has precision 0.
pub fn score(predicted: &PairSet, gold: &PairSet) -> Scores {
    let tp = predicted.intersection_len(gold);
    let precision = if predicted.is_empty() { 0.0 } else { tp as f64 / predicted.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { tp as f64 / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        precision,
        recall,
        f1,
        true_positives: tp,
        predicted: predicted.len(),
        gold: gold.len(),
    }
}

/// `1 - |retained| / |candidates|`; 0 when there are no candidates.
pub fn reduction_ratio(retained: usize, candidates: usize) -> f64 {
    if candidates == 0 {
        0.0
    } else {
        1.0 - retained as f64 / candidates as f64
    }
}

/// Fraction of gold matches present in `pairs`; 1 for an empty gold set.
pub fn pair_completeness(pairs: &PairSet, gold: &PairSet) -> f64 {
    if gold.is_empty() {
        1.0
    } else {
        gold.intersection_len(pairs) as f64 / gold.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub reduction_ratio: f64,
    pub pair_completeness: f64,
    pub questions: usize,
    pub loops: usize,
    pub candidates: usize,
    pub retained: usize,
}
