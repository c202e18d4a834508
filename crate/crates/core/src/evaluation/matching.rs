use serde::{Deserialize, Serialize};

use super::{EvalPerson, MatchConfig, Setting};
use crate::geometry::{dist2, dist3, root_align};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// `(gt_index, pred_index)` in the order they were picked.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

/// `scores[g][p]`: number of matching joints of ground truth `g` that
/// prediction `p` hits under the configured setting.
pub fn score_matrix(
    predictions: &[EvalPerson],
    ground_truths: &[EvalPerson],
    cfg: &MatchConfig,
    root: usize,
) -> Vec<Vec<usize>> {
    ground_truths
        .iter()
        .map(|g| predictions.iter().map(|p| pair_score(p, g, cfg, root)).collect())
        .collect()
}

fn pair_score(pred: &EvalPerson, gt: &EvalPerson, cfg: &MatchConfig, root: usize) -> usize {
    let n = gt.joints_mm.len().min(pred.joints_mm.len());
    let joints: Box<dyn Iterator<Item = usize>> = match &cfg.matching_joints {
        Some(subset) => Box::new(subset.iter().copied().filter(move |&j| j < n)),
        None => Box::new(0..n),
    };
    match cfg.setting {
        Setting::Setting1 => {
            let (Some(pk), Some(gk)) = (&pred.keypoints_2d, &gt.keypoints_2d) else {
                return 0;
            };
            joints
                .filter(|&j| {
                    pk.is_visible(j) && gk.is_visible(j) && dist2(pk.joints[j], gk.joints[j]) < cfg.px_proximity
                })
                .count()
        }
        Setting::Setting2 => {
            let (p, g) = root_align(&pred.joints_mm, &gt.joints_mm, root);
            joints.filter(|&j| dist3(p[j], g[j]) < cfg.pck_threshold_mm).count()
        }
    }
}

/// Greedy assignment on a score matrix: repeatedly take the available pair
/// with the highest positive score, breaking ties by lower ground-truth
/// index, then lower prediction index.
pub fn greedy_assign(scores: &[Vec<usize>], n_pred: usize) -> Matching {
    let n_gt = scores.len();
    let mut gt_free = vec![true; n_gt];
    let mut pred_free = vec![true; n_pred];
    let mut pairs = Vec::new();
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for (g, row) in scores.iter().enumerate() {
            if !gt_free[g] {
                continue;
            }
            for (p, &s) in row.iter().enumerate().take(n_pred) {
                if pred_free[p] && s > 0 && best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, g, p));
                }
            }
        }
        let Some((_, g, p)) = best else { break };
        gt_free[g] = false;
        pred_free[p] = false;
        pairs.push((g, p));
    }
    Matching {
        pairs,
        unmatched_gt: (0..n_gt).filter(|&g| gt_free[g]).collect(),
        unmatched_pred: (0..n_pred).filter(|&p| pred_free[p]).collect(),
    }
}

pub fn greedy_match(
    predictions: &[EvalPerson],
    ground_truths: &[EvalPerson],
    cfg: &MatchConfig,
    root: usize,
) -> Matching {
    greedy_assign(&score_matrix(predictions, ground_truths, cfg, root), predictions.len())
}
