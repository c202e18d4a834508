//! Decode, lift, place and evaluate one scene.
//!
//! Stages run in order and each is skipped when it has nothing to do:
//! decoding needs heatmaps, lifting needs a model, evaluation needs ground
//! truth. Errors are tagged with the failing stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalFrame, EvalPerson, EvalReport, MatchConfig, Weighting};
use crate::heatmap::{soft_argmax_mapped, DEFAULT_TEMPERATURE};
use crate::io::{write_json, PlacedFile, SceneFile};
use crate::lifting::{input_vector, normalize_keypoints, LiftingModel};
use crate::placement::{place_scene, PlacementOptions, ScenePlacement};
use crate::pose::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub temperature: f64,
    pub placement: PlacementOptions,
    /// Hold the focal length at the scene's camera when it has one.
    pub use_scene_camera: bool,
    pub eval: MatchConfig,
    pub weighting: Weighting,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            placement: PlacementOptions::default(),
            use_scene_camera: false,
            eval: MatchConfig::default(),
            weighting: Weighting::PersonWeighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Input scene with decoded keypoints and lifted poses filled in.
    pub scene: Scene,
    pub decoded: usize,
    pub lifted: usize,
    pub placement: ScenePlacement,
    pub report: Option<EvalReport>,
}

pub fn run_pipeline(scene: &Scene, model: Option<&LiftingModel>, opts: &PipelineOptions) -> Result<PipelineOutput> {
    scene.validate()?;
    let mut scene = scene.clone();
    let decoded = decode_stage(&mut scene, opts.temperature).map_err(|e| e.in_stage("decode"))?;
    let lifted = match model {
        Some(m) => lift_stage(&mut scene, m).map_err(|e| e.in_stage("lift"))?,
        None => 0,
    };
    let placement = place_stage(&scene, opts).map_err(|e| e.in_stage("place"))?;
    let report = eval_stage(&scene, &placement, opts).map_err(|e| e.in_stage("eval"))?;
    Ok(PipelineOutput {
        scene,
        decoded,
        lifted,
        placement,
        report,
    })
}

fn decode_stage(scene: &mut Scene, temperature: f64) -> Result<usize> {
    let mut n = 0;
    for p in &mut scene.persons {
        if let Some(h) = &p.heatmaps {
            p.keypoints_2d = Some(soft_argmax_mapped(&h.heatmap, temperature, &h.to_image)?);
            n += 1;
        }
    }
    Ok(n)
}

fn lift_stage(scene: &mut Scene, model: &LiftingModel) -> Result<usize> {
    let n_joints = scene.skeleton.n_joints();
    if model.config.n_joints != n_joints {
        return Err(Error::ShapeMismatch {
            expected: n_joints,
            got: model.config.n_joints,
        });
    }
    let (w, h) = (scene.image_w_px, scene.image_h_px);
    let mut n = 0;
    for p in &mut scene.persons {
        if let Some(kp) = &p.keypoints_2d {
            p.pose_3d = Some(model.predict(&input_vector(&normalize_keypoints(kp, w, h)))?);
            n += 1;
        }
    }
    Ok(n)
}

fn place_stage(scene: &Scene, opts: &PipelineOptions) -> Result<ScenePlacement> {
    let mut popts = opts.placement.clone();
    if let (true, Some(cam)) = (opts.use_scene_camera, &scene.camera) {
        popts.init_fov_degrees = (2.0 * (scene.image_w_px / 2.0 / cam.focal_px).atan()).to_degrees();
        popts.fix_focal = true;
    }
    place_scene(scene, &popts)
}

fn eval_stage(scene: &Scene, placement: &ScenePlacement, opts: &PipelineOptions) -> Result<Option<EvalReport>> {
    let gt_frame = EvalFrame::from_scene(scene);
    if gt_frame.ground_truths.is_empty() {
        return Ok(None);
    }
    let predictions = placement
        .person_indices
        .iter()
        .zip(&placement.result.global_poses)
        .map(|(&i, g)| EvalPerson {
            keypoints_2d: scene.persons[i].keypoints_2d.clone(),
            joints_mm: g.joints_global(),
            occluded: None,
        })
        .collect();
    let frame = EvalFrame {
        predictions,
        ..gt_frame
    };
    evaluate(&[frame], &opts.eval, scene.skeleton.root(), opts.weighting).map(Some)
}

/// Writes `<stem>.scene.json`, `<stem>.placed.json` and, when evaluated,
/// `<stem>.report.json` into `dir`. Returns the written paths.
pub fn write_pipeline_outputs(dir: &Path, stem: &str, out: &PipelineOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join(format!("{stem}.scene.json"));
    write_json(&path, &SceneFile::from_scene(&out.scene))?;
    written.push(path);
    let path = dir.join(format!("{stem}.placed.json"));
    write_json(&path, &PlacedFile::new(out.placement.clone()))?;
    written.push(path);
    if let Some(r) = &out.report {
        let path = dir.join(format!("{stem}.report.json"));
        write_json(&path, r)?;
        written.push(path);
    }
    Ok(written)
}
