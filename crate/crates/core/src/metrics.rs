//! Confusion-matrix metrics and ROC AUC.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub acc: f64,
    /// Type I error `fp / (tn + fp)`.
    pub err1: f64,
    /// Type II error `fn / (fn + tp)`.
    pub err2: f64,
    /// `NaN` when only one class is present.
    pub auc: f64,
}

impl EvalReport {
    /// Builds a report from confusion counts; rates with a zero denominator are 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize, auc: f64) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            tp,
            fp,
            fn_,
            tn,
            acc: ratio(tp + tn, tp + fp + fn_ + tn),
            err1: ratio(fp, tn + fp),
            err2: ratio(fn_, fn_ + tp),
            auc,
        }
    }

    /// Counts predictions against truths (`true` = positive).
    pub fn from_predictions(predicted: &[bool], actual: &[bool], scores: &[f64]) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::Undefined("evaluation over zero samples".into()));
        }
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let auc = auc(scores, actual).unwrap_or(f64::NAN);
        Ok(Self::from_counts(tp, fp, fn_, tn, auc))
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn csv_header() -> &'static str {
        "tp,fp,fn,tn,acc,err1,err2,auc"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.tp, self.fp, self.fn_, self.tn, self.acc, self.err1, self.err2, self.auc
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>10}", "metric", "value")?;
        writeln!(f, "{:<6} {:>10}", "TP", self.tp)?;
        writeln!(f, "{:<6} {:>10}", "FP", self.fp)?;
        writeln!(f, "{:<6} {:>10}", "FN", self.fn_)?;
        writeln!(f, "{:<6} {:>10}", "TN", self.tn)?;
        writeln!(f, "{:<6} {:>10.4}", "Acc", self.acc)?;
        writeln!(f, "{:<6} {:>10.4}", "Err1", self.err1)?;
        writeln!(f, "{:<6} {:>10.4}", "Err2", self.err2)?;
        write!(f, "{:<6} {:>10.4}", "AUC", self.auc)
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auc", format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie group
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
