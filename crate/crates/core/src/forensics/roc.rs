use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    /// `(false_positive_rate, true_positive_rate)`, from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    /// Score threshold reached at each point after the first (`score >= t` is positive).
    pub thresholds: Vec<f64>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC over every distinct score, with trapezoidal AUC.
///
/// The trapezoid sum is accumulated in integers (twice the area in units of
/// one positive times one negative), so ties contribute exactly one half.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocReport> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParams("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area = 0u64;
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t);
    }
    let auc = twice_area as f64 / (2 * pos as u64 * neg as u64) as f64;
    Ok(RocReport { points, thresholds, auc, positives: pos, negatives: neg })
}
