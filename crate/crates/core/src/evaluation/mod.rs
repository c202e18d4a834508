//! Multi-person 3D pose evaluation.
//!
//! Ground-truth and predicted persons are paired by greedy matching, either
//! on 2D keypoint proximity ([`Setting::Setting1`]) or on root-aligned 3D
//! joint distance ([`Setting::Setting2`]). Matched pairs feed 3D PCK, its
//! AUC over a threshold grid, and MPJPE; unmatched ground truth feeds the
//! all-annotated PCK and the detection rate.
//!
//! Per-frame results are folded into an [`EvalAccumulator`], whose counts
//! merge associatively, so frames can be evaluated in any order or in
//! parallel.

mod matching;
mod metrics;

pub use matching::{greedy_assign, greedy_match, score_matrix, Matching};
pub use metrics::{
    auc_pck, default_auc_thresholds, detection_rate, is_correct, joint_errors, mpjpe, pck_3d, MatchedPair, MissedPerson,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Keypoints2D, Scene};

pub const DEFAULT_PX_PROXIMITY: f64 = 40.0;
pub const DEFAULT_PCK_THRESHOLD_MM: f64 = 150.0;
const DEFAULT_SEQUENCE: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Match on counts of 2D keypoints within `px_proximity`.
    Setting1,
    /// Match on counts of root-aligned 3D joints within `pck_threshold_mm`.
    Setting2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PckMode {
    AllAnnotated,
    DetectedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Pool every person; sequences with more people weigh more.
    PersonWeighted,
    /// Unweighted mean of per-sequence figures.
    SequenceMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub setting: Setting,
    pub px_proximity: f64,
    pub pck_threshold_mm: f64,
    /// Joints scored during matching; `None` means all.
    pub matching_joints: Option<Vec<usize>>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Setting1,
            px_proximity: DEFAULT_PX_PROXIMITY,
            pck_threshold_mm: DEFAULT_PCK_THRESHOLD_MM,
            matching_joints: None,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.px_proximity > 0.0 && self.pck_threshold_mm > 0.0) {
            return Err(Error::invalid("thresholds", "must be > 0"));
        }
        Ok(())
    }
}

/// A person as seen by the evaluator. `joints_mm` may be root-relative or
/// global; errors are always computed after root alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPerson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints_2d: Option<Keypoints2D>,
    pub joints_mm: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluded: Option<Vec<bool>>,
}

/// One image worth of predictions and ground truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    pub predictions: Vec<EvalPerson>,
    pub ground_truths: Vec<EvalPerson>,
}

impl EvalFrame {
    /// Predictions from `pose_3d` (+ `keypoints_2d`), ground truth from
    /// `gt_global_pose` (+ `gt_keypoints_2d`, `occluded`).
    pub fn from_scene(scene: &Scene) -> Self {
        let predictions = scene
            .persons
            .iter()
            .filter_map(|p| {
                p.pose_3d.as_ref().map(|pose| EvalPerson {
                    keypoints_2d: p.keypoints_2d.clone(),
                    joints_mm: pose.joints.clone(),
                    occluded: None,
                })
            })
            .collect();
        let ground_truths = scene
            .persons
            .iter()
            .filter_map(|p| {
                p.gt_global_pose.as_ref().map(|g| EvalPerson {
                    keypoints_2d: p.gt_keypoints_2d.clone(),
                    joints_mm: g.joints_global(),
                    occluded: p.occluded.clone(),
                })
            })
            .collect();
        Self {
            sequence: scene.sequence.clone(),
            predictions,
            ground_truths,
        }
    }
}

/// Matching and per-joint errors for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvaluation {
    pub sequence: Option<String>,
    pub matching: Matching,
    pub matched: Vec<MatchedPair>,
    pub missed: Vec<MissedPerson>,
}

pub fn evaluate_frame(frame: &EvalFrame, cfg: &MatchConfig, root: usize) -> Result<FrameEvaluation> {
    cfg.validate()?;
    for p in frame.predictions.iter().chain(&frame.ground_truths) {
        if root >= p.joints_mm.len() {
            return Err(Error::invalid("joints_mm", "root index out of range"));
        }
    }
    let matching = greedy_match(&frame.predictions, &frame.ground_truths, cfg, root);
    let mut matched = Vec::with_capacity(matching.pairs.len());
    for &(g, p) in &matching.pairs {
        let gt = &frame.ground_truths[g];
        let pred = &frame.predictions[p];
        if gt.joints_mm.len() != pred.joints_mm.len() {
            return Err(Error::ShapeMismatch {
                expected: gt.joints_mm.len(),
                got: pred.joints_mm.len(),
            });
        }
        matched.push(MatchedPair {
            gt_index: g,
            pred_index: p,
            errors_mm: joint_errors(&pred.joints_mm, &gt.joints_mm, root),
            occluded: gt.occluded.clone(),
        });
    }
    let missed = matching
        .unmatched_gt
        .iter()
        .map(|&g| MissedPerson {
            gt_index: g,
            n_joints: frame.ground_truths[g].joints_mm.len(),
            occluded: frame.ground_truths[g].occluded.clone(),
        })
        .collect();
    Ok(FrameEvaluation {
        sequence: frame.sequence.clone(),
        matching,
        matched,
        missed,
    })
}

/// Integer counts (plus the MPJPE sum) for one sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub gt_persons: usize,
    pub matched_persons: usize,
    pub matched_joints: usize,
    pub missed_joints: usize,
    pub correct_joints: usize,
    pub auc_correct: Vec<usize>,
    pub occluded_joints: usize,
    pub occluded_correct: usize,
    pub error_sum_mm: f64,
    pub error_count: usize,
}

impl EvalCounts {
    fn merge(&mut self, other: &EvalCounts) {
        self.gt_persons += other.gt_persons;
        self.matched_persons += other.matched_persons;
        self.matched_joints += other.matched_joints;
        self.missed_joints += other.missed_joints;
        self.correct_joints += other.correct_joints;
        if self.auc_correct.len() < other.auc_correct.len() {
            self.auc_correct.resize(other.auc_correct.len(), 0);
        }
        for (a, b) in self.auc_correct.iter_mut().zip(&other.auc_correct) {
            *a += b;
        }
        self.occluded_joints += other.occluded_joints;
        self.occluded_correct += other.occluded_correct;
        self.error_sum_mm += other.error_sum_mm;
        self.error_count += other.error_count;
    }

    fn metrics(&self, n_thresholds: usize) -> Metrics {
        let all = self.matched_joints + self.missed_joints;
        let auc = if all == 0 {
            1.0
        } else {
            let mut padded = self.auc_correct.clone();
            padded.resize(n_thresholds, 0);
            padded.iter().map(|&c| c as f64 / all as f64).sum::<f64>() / n_thresholds.max(1) as f64
        };
        Metrics {
            pck_all_annotated: metrics::percentage(self.correct_joints, all),
            pck_detected_only: if self.matched_joints == 0 && self.gt_persons > 0 {
                0.0
            } else {
                metrics::percentage(self.correct_joints, self.matched_joints)
            },
            pck_occluded: (self.occluded_joints > 0)
                .then(|| metrics::percentage(self.occluded_correct, self.occluded_joints)),
            auc,
            mpjpe_mm: (self.error_count > 0).then(|| self.error_sum_mm / self.error_count as f64),
            detection_rate: detection_rate(self.matched_persons, self.gt_persons),
            gt_persons: self.gt_persons,
            matched_persons: self.matched_persons,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pck_all_annotated: f64,
    pub pck_detected_only: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pck_occluded: Option<f64>,
    pub auc: f64,
    pub mpjpe_mm: Option<f64>,
    pub detection_rate: f64,
    pub gt_persons: usize,
    pub matched_persons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub pck_threshold_mm: f64,
    pub weighting: Weighting,
    #[serde(flatten)]
    pub overall: Metrics,
    pub per_sequence: Vec<SequenceReport>,
}

/// Folds frame evaluations into per-sequence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalAccumulator {
    pub cfg: MatchConfig,
    pub root: usize,
    pub auc_thresholds: Vec<f64>,
    pub sequences: BTreeMap<String, EvalCounts>,
}

impl EvalAccumulator {
    pub fn new(cfg: MatchConfig, root: usize) -> Self {
        Self {
            cfg,
            root,
            auc_thresholds: default_auc_thresholds(),
            sequences: BTreeMap::new(),
        }
    }

    pub fn add_frame(&mut self, frame: &EvalFrame) -> Result<()> {
        let ev = evaluate_frame(frame, &self.cfg, self.root)?;
        self.add_evaluation(&ev);
        Ok(())
    }

    pub fn add_evaluation(&mut self, ev: &FrameEvaluation) {
        let t = self.cfg.pck_threshold_mm;
        let mut c = EvalCounts {
            gt_persons: ev.matched.len() + ev.missed.len(),
            matched_persons: ev.matched.len(),
            auc_correct: vec![0; self.auc_thresholds.len()],
            ..Default::default()
        };
        for m in &ev.matched {
            c.matched_joints += m.errors_mm.len();
            for (j, &e) in m.errors_mm.iter().enumerate() {
                let ok = is_correct(e, t);
                c.correct_joints += usize::from(ok);
                for (k, &th) in self.auc_thresholds.iter().enumerate() {
                    c.auc_correct[k] += usize::from(is_correct(e, th));
                }
                if m.occluded.as_ref().is_some_and(|o| o.get(j).copied().unwrap_or(false)) {
                    c.occluded_joints += 1;
                    c.occluded_correct += usize::from(ok);
                }
                if j != self.root {
                    c.error_sum_mm += e;
                    c.error_count += 1;
                }
            }
        }
        for m in &ev.missed {
            c.missed_joints += m.n_joints;
            c.occluded_joints += m.occluded.as_ref().map_or(0, |o| o.iter().filter(|&&x| x).count());
        }
        let key = ev.sequence.clone().unwrap_or_else(|| DEFAULT_SEQUENCE.to_string());
        self.sequences.entry(key).or_default().merge(&c);
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        for (k, v) in &other.sequences {
            self.sequences.entry(k.clone()).or_default().merge(v);
        }
    }

    pub fn totals(&self) -> EvalCounts {
        let mut total = EvalCounts::default();
        for c in self.sequences.values() {
            total.merge(c);
        }
        total
    }

    pub fn report(&self, weighting: Weighting) -> EvalReport {
        let n_t = self.auc_thresholds.len();
        let per_sequence: Vec<SequenceReport> = self
            .sequences
            .iter()
            .map(|(k, c)| SequenceReport {
                sequence: k.clone(),
                metrics: c.metrics(n_t),
            })
            .collect();
        let overall = match weighting {
            Weighting::PersonWeighted => self.totals().metrics(n_t),
            Weighting::SequenceMean => sequence_mean(&per_sequence, &self.totals().metrics(n_t)),
        };
        EvalReport {
            setting: self.cfg.setting,
            pck_threshold_mm: self.cfg.pck_threshold_mm,
            weighting,
            overall,
            per_sequence,
        }
    }
}

fn sequence_mean(seqs: &[SequenceReport], pooled: &Metrics) -> Metrics {
    if seqs.is_empty() {
        return pooled.clone();
    }
    let n = seqs.len() as f64;
    let mean = |f: &dyn Fn(&Metrics) -> f64| seqs.iter().map(|s| f(&s.metrics)).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = seqs.iter().filter_map(|s| f(&s.metrics)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Metrics {
        pck_all_annotated: mean(&|m| m.pck_all_annotated),
        pck_detected_only: mean(&|m| m.pck_detected_only),
        pck_occluded: mean_opt(&|m| m.pck_occluded),
        auc: mean(&|m| m.auc),
        mpjpe_mm: mean_opt(&|m| m.mpjpe_mm),
        detection_rate: mean(&|m| m.detection_rate),
        gt_persons: pooled.gt_persons,
        matched_persons: pooled.matched_persons,
    }
}

/// Evaluates frames and produces the report in one call.
pub fn evaluate(frames: &[EvalFrame], cfg: &MatchConfig, root: usize, weighting: Weighting) -> Result<EvalReport> {
    let mut acc = EvalAccumulator::new(cfg.clone(), root);
    for f in frames {
        acc.add_frame(f)?;
    }
    Ok(acc.report(weighting))
}

impl EvalReport {
    /// Aligned text table: one column per sequence plus the total.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(&str, &Metrics)> = self
            .per_sequence
            .iter()
            .map(|s| (s.sequence.as_str(), &s.metrics))
            .collect();
        cols.push(("Total", &self.overall));
        let width = cols.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(7) + 2;
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        type Row<'a> = (&'a str, Box<dyn Fn(&Metrics) -> String>);
        let rows: Vec<Row> = vec![
            (
                "PCK all (%)",
                Box::new(|m: &Metrics| format!("{:.1}", m.pck_all_annotated)),
            ),
            (
                "PCK detected (%)",
                Box::new(|m: &Metrics| format!("{:.1}", m.pck_detected_only)),
            ),
            ("PCK occluded (%)", Box::new(move |m: &Metrics| fmt_opt(m.pck_occluded))),
            ("AUC", Box::new(|m: &Metrics| format!("{:.3}", m.auc))),
            ("MPJPE (mm)", Box::new(move |m: &Metrics| fmt_opt(m.mpjpe_mm))),
            (
                "Detected (%)",
                Box::new(|m: &Metrics| format!("{:.1}", m.detection_rate)),
            ),
        ];
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let mut out = String::new();
        let setting = match self.setting {
            Setting::Setting1 => "setting 1 (2D matching)",
            Setting::Setting2 => "setting 2 (3D matching)",
        };
        let _ = writeln!(out, "{setting}, PCK threshold {} mm", self.pck_threshold_mm);
        let _ = write!(out, "{:label_w$}", "");
        for (name, _) in &cols {
            let _ = write!(out, "{name:>width$}");
        }
        out.push('\n');
        for (label, f) in &rows {
            let _ = write!(out, "{label:label_w$}");
            for (_, m) in &cols {
                let _ = write!(out, "{:>width$}", f(m));
            }
            out.push('\n');
        }
        out
    }
}
