//! TP/FP/FN counting and the precision, recall and F-measure formulas.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::compare::{Comparator, ComparisonMode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    /// True when there is nothing to score: no ground truth and no prediction.
    pub fn is_undefined(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    pub fn metrics(&self) -> Option<MetricRow> {
        if self.is_undefined() {
            return None;
        }
        let p = precision(*self);
        let r = recall(*self);
        Some(MetricRow {
            precision: p,
            recall: r,
            f_measure: f_measure(p, r),
        })
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl MetricRow {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f_measure: f_measure(precision, recall),
        }
    }

    pub const ZERO: MetricRow = MetricRow {
        precision: 0.0,
        recall: 0.0,
        f_measure: 0.0,
    };
}

pub fn precision(c: Counts) -> f64 {
    if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    }
}

pub fn recall(c: Counts) -> f64 {
    if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Greedy one-to-one matching: each gt item, in order, takes the first
/// unconsumed prediction for which `eq` holds.
pub fn greedy_match<G, P>(gt: &[G], pred: &[P], eq: impl Fn(&G, &P) -> bool) -> Counts {
    let mut used = vec![false; pred.len()];
    let mut tp = 0;
    for g in gt {
        if let Some(j) = (0..pred.len()).find(|&j| !used[j] && eq(g, &pred[j])) {
            used[j] = true;
            tp += 1;
        }
    }
    Counts::new(tp, pred.len() - tp, gt.len() - tp)
}

pub fn match_sets_with<S: AsRef<str>, T: AsRef<str>>(
    comparator: &Comparator,
    gt: &[S],
    pred: &[T],
    mode: ComparisonMode,
) -> Counts {
    greedy_match(gt, pred, |g, p| comparator.matches(g.as_ref(), p.as_ref(), mode))
}

pub fn match_sets<S: AsRef<str>, T: AsRef<str>>(gt: &[S], pred: &[T], mode: ComparisonMode) -> Counts {
    match_sets_with(&Comparator::default(), gt, pred, mode)
}

/// Arithmetic mean of each column; `None` for an empty slice.
pub fn mean_row(rows: &[MetricRow]) -> Option<MetricRow> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(MetricRow {
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        f_measure: rows.iter().map(|r| r.f_measure).sum::<f64>() / n,
    })
}
