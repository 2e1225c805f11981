use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Pixels scoring at or above this count as positive. The first point
    /// uses `+inf` (nothing positive).
    pub threshold: f64,
}

/// Pixel-level ROC over every distinct score, with trapezoidal AUC. Points
/// are ordered by decreasing threshold, so both rates are non-decreasing.
pub fn roc_auc(scores: &[f64], targets: &[bool]) -> Result<(Vec<RocPoint>, f64)> {
    if scores.len() != targets.len() {
        return Err(CoreError::Precondition(format!(
            "{} scores for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(CoreError::NonFinite(format!("ROC score {s}")));
    }
    let pos = targets.iter().filter(|&&t| t).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CoreError::Data(
            "ROC needs at least one positive and one negative pixel".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if targets[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        };
        let last = points.last().expect("non-empty");
        auc += (p.fpr - last.fpr) * (p.tpr + last.tpr) * 0.5;
        points.push(p);
    }
    Ok((points, auc))
}
