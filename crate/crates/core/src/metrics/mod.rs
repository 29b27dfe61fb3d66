//! Sequence and set metrics, evaluation reports and read-mode aggregation.

mod read_modes;
mod report;

pub use read_modes::{aggregate_read_modes, ReadModeRecord, ReadModeSummary};
pub use report::{EvalReport, ExampleRecord, FrequencyPrior, ReportSummary};

use thiserror::Error;

use crate::tasks::vocab::{END_ID, PAD_ID};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("read-mode log has no usable records ({skipped} malformed)")]
    EmptyLog { skipped: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Drops end markers and padding.
pub fn strip_control(seq: &[usize]) -> Vec<usize> {
    seq.iter().copied().filter(|&t| t != END_ID && t != PAD_ID).collect()
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over the longer length; 0 when both are empty.
pub fn nld<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

fn as_set(seq: &[usize]) -> Vec<usize> {
    let mut s = strip_control(seq);
    s.sort_unstable();
    s.dedup();
    s
}

fn intersection(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| b.binary_search(x).is_ok()).count()
}

/// Fraction of distinct predicted codes that occur in the truth. An empty
/// prediction scores 0.
pub fn set_precision(pred: &[usize], truth: &[usize]) -> f64 {
    let (p, t) = (as_set(pred), as_set(truth));
    if p.is_empty() {
        return 0.0;
    }
    intersection(&p, &t) as f64 / p.len() as f64
}

/// Intersection over union of the distinct codes; 1 when both are empty.
pub fn jaccard(pred: &[usize], truth: &[usize]) -> f64 {
    let (p, t) = (as_set(pred), as_set(truth));
    let inter = intersection(&p, &t);
    let union = p.len() + t.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}
