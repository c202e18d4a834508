use serde::{Deserialize, Serialize};

use super::PckMode;
use crate::error::{Error, Result};
use crate::geometry::{dist3, root_align};

/// Per-joint root-aligned errors of one matched prediction/ground-truth pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt_index: usize,
    pub pred_index: usize,
    pub errors_mm: Vec<f64>,
    pub occluded: Option<Vec<bool>>,
}

/// A ground-truth person with no matched prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissedPerson {
    pub gt_index: usize,
    pub n_joints: usize,
    pub occluded: Option<Vec<bool>>,
}

pub fn joint_errors(pred: &[[f64; 3]], gt: &[[f64; 3]], root: usize) -> Vec<f64> {
    let (p, g) = root_align(pred, gt, root);
    p.iter().zip(&g).map(|(a, b)| dist3(*a, *b)).collect()
}

/// A joint is correct when its error is strictly below the threshold; a
/// zero error counts as correct at every threshold, including 0.
pub fn is_correct(error_mm: f64, threshold_mm: f64) -> bool {
    error_mm < threshold_mm || error_mm == 0.0
}

/// 3D PCK in percent. `AllAnnotated` counts every joint of a missed person
/// as wrong; `DetectedOnly` ignores missed persons. Empty denominators give 100.
pub fn pck_3d(matched: &[MatchedPair], missed: &[MissedPerson], mode: PckMode, threshold_mm: f64) -> f64 {
    let correct: usize = matched
        .iter()
        .map(|m| m.errors_mm.iter().filter(|&&e| is_correct(e, threshold_mm)).count())
        .sum();
    let mut total: usize = matched.iter().map(|m| m.errors_mm.len()).sum();
    if mode == PckMode::AllAnnotated {
        total += missed.iter().map(|m| m.n_joints).sum::<usize>();
    }
    percentage(correct, total)
}

/// Mean of all-annotated PCK (as a fraction) over `thresholds_mm`.
pub fn auc_pck(matched: &[MatchedPair], missed: &[MissedPerson], thresholds_mm: &[f64]) -> Result<f64> {
    if thresholds_mm.is_empty() {
        return Err(Error::invalid("thresholds", "empty grid"));
    }
    if thresholds_mm.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("thresholds", "must be ascending"));
    }
    let sum: f64 = thresholds_mm
        .iter()
        .map(|&t| pck_3d(matched, missed, PckMode::AllAnnotated, t) / 100.0)
        .sum();
    Ok(sum / thresholds_mm.len() as f64)
}

/// Mean root-aligned joint error over matched persons, root excluded.
pub fn mpjpe(matched: &[MatchedPair], root: usize) -> Result<f64> {
    let (sum, count) = matched
        .iter()
        .flat_map(|m| m.errors_mm.iter().enumerate().filter(|(j, _)| *j != root))
        .fold((0.0, 0usize), |(s, c), (_, e)| (s + e, c + 1));
    if count == 0 {
        return Err(Error::EmptyMatching);
    }
    Ok(sum / count as f64)
}

/// Matched ground truths over all ground truths, in percent; 100 when there
/// is no ground truth.
pub fn detection_rate(n_matched: usize, n_ground_truth: usize) -> f64 {
    percentage(n_matched, n_ground_truth)
}

pub(crate) fn percentage(num: usize, den: usize) -> f64 {
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Default AUC grid: 0 to 150 mm in 5 mm steps (31 points).
pub fn default_auc_thresholds() -> Vec<f64> {
    (0..=30).map(|k| 5.0 * k as f64).collect()
}
