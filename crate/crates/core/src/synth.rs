//! Synthetic multi-person scenes with exact ground truth.
//!
//! Poses perturb a standing template: every joint, root included, gets a
//! random local rotation with each Euler angle within `±joint_angle_degrees`,
//! applied down the kinematic chain, so bone lengths are those of the
//! template scaled by the person's height factor.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::perspective_project;
use crate::lifting::{normalize_keypoints, LiftingSample};
use crate::placement::init_focal;
use crate::pose::{CameraIntrinsics, GlobalPose, Keypoints2D, PersonRecord, Pose3D, Scene};
use crate::skeleton::Skeleton;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_persons: [usize; 2],
    pub depth_range_mm: [f64; 2],
    pub lateral_range_mm: [f64; 2],
    pub vertical_range_mm: [f64; 2],
    /// Multiplier on the template bone lengths.
    pub pose_scale: f64,
    pub joint_angle_degrees: f64,
    /// Per-person height factor drawn from `1 ± height_variation`; the
    /// predicted 3D pose keeps the unscaled height.
    pub height_variation: f64,
    pub noise_sigma_px: f64,
    pub occlusion_rate: f64,
    pub seed: u64,
    pub image_w_px: f64,
    pub image_h_px: f64,
    pub true_fov_degrees: f64,
    pub sequence: Option<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_persons: [1, 4],
            depth_range_mm: [3000.0, 8000.0],
            lateral_range_mm: [-1500.0, 1500.0],
            vertical_range_mm: [-300.0, 300.0],
            pose_scale: 1.0,
            joint_angle_degrees: 30.0,
            height_variation: 0.0,
            noise_sigma_px: 0.0,
            occlusion_rate: 0.0,
            seed: 0,
            image_w_px: 1280.0,
            image_h_px: 960.0,
            true_fov_degrees: 60.0,
            sequence: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.depth_range_mm;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid("depth_range_mm", "need 0 < min <= max"));
        }
        if self.n_persons[0] > self.n_persons[1] {
            return Err(Error::invalid("n_persons", "min > max"));
        }
        if self.lateral_range_mm[0] > self.lateral_range_mm[1] || self.vertical_range_mm[0] > self.vertical_range_mm[1]
        {
            return Err(Error::invalid("range", "min > max"));
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return Err(Error::invalid("occlusion_rate", "need 0 <= rate < 1"));
        }
        if !(self.noise_sigma_px >= 0.0) || !(self.pose_scale > 0.0) {
            return Err(Error::invalid("noise/scale", "out of range"));
        }
        if !(0.0..1.0).contains(&self.height_variation) {
            return Err(Error::invalid("height_variation", "need 0 <= v < 1"));
        }
        if !(self.image_w_px > 0.0 && self.image_h_px > 0.0) {
            return Err(Error::invalid("image size", "must be > 0"));
        }
        init_focal(self.image_w_px, self.true_fov_degrees)?;
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(
            init_focal(self.image_w_px, self.true_fov_degrees)?,
            self.image_w_px,
            self.image_h_px,
        )
    }
}

/// Template bone vector (child minus parent, mm) for a default joint name.
fn template_offset(name: &str) -> [f64; 3] {
    match name {
        "spine" => [0.0, -250.0, 0.0],
        "neck" => [0.0, -250.0, 0.0],
        "head" => [0.0, -150.0, 0.0],
        "nose" => [0.0, -50.0, -80.0],
        "l_shoulder" => [170.0, 30.0, 0.0],
        "r_shoulder" => [-170.0, 30.0, 0.0],
        "l_elbow" | "r_elbow" => [0.0, 280.0, 0.0],
        "l_wrist" | "r_wrist" => [0.0, 250.0, 0.0],
        "l_hip" => [100.0, 20.0, 0.0],
        "r_hip" => [-100.0, 20.0, 0.0],
        "l_knee" | "r_knee" => [0.0, 420.0, 0.0],
        "l_ankle" | "r_ankle" => [0.0, 400.0, 0.0],
        _ => [0.0, -200.0, 0.0],
    }
}

/// Template bone length for every joint (0 for the root).
pub fn template_bone_lengths(skeleton: &Skeleton, scale: f64) -> Vec<f64> {
    (0..skeleton.n_joints())
        .map(|j| match skeleton.parent_of(j) {
            None => 0.0,
            Some(_) => {
                let o = template_offset(&skeleton.joint_names()[j]);
                scale * (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt()
            }
        })
        .collect()
}

/// Unrotated standing pose, facing the camera, y down.
pub fn template_pose(skeleton: &Skeleton, scale: f64) -> Pose3D {
    articulate(skeleton, scale, &vec![Rotation3::identity(); skeleton.n_joints()])
}

fn articulate(skeleton: &Skeleton, scale: f64, local: &[Rotation3<f64>]) -> Pose3D {
    let n = skeleton.n_joints();
    let mut global = vec![Rotation3::identity(); n];
    let mut pos = vec![Vector3::zeros(); n];
    for j in skeleton.topological_order() {
        match skeleton.parent_of(j) {
            None => global[j] = local[j],
            Some(p) => {
                global[j] = global[p] * local[j];
                let o = template_offset(&skeleton.joint_names()[j]);
                pos[j] = pos[p] + global[j] * (scale * Vector3::new(o[0], o[1], o[2]));
            }
        }
    }
    Pose3D {
        joints: pos.iter().map(|v| [v.x, v.y, v.z]).collect(),
    }
}

fn random_rotations(skeleton: &Skeleton, max_deg: f64, rng: &mut ChaCha8Rng) -> Vec<Rotation3<f64>> {
    let a = max_deg.to_radians();
    (0..skeleton.n_joints())
        .map(|_| {
            let mut angle = || if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
            Rotation3::from_euler_angles(angle(), angle(), angle())
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

struct SampledPerson {
    gt: GlobalPose,
    predicted_pose: Pose3D,
}

fn sample_person(
    cfg: &SynthConfig,
    skeleton: &Skeleton,
    cam: &CameraIntrinsics,
    rng: &mut ChaCha8Rng,
) -> SampledPerson {
    let rotations = random_rotations(skeleton, cfg.joint_angle_degrees, rng);
    let height = if cfg.height_variation > 0.0 {
        rng.gen_range(1.0 - cfg.height_variation..=1.0 + cfg.height_variation)
    } else {
        1.0
    };
    let gt_pose = articulate(skeleton, cfg.pose_scale * height, &rotations);
    let predicted_pose = if height == 1.0 {
        gt_pose.clone()
    } else {
        articulate(skeleton, cfg.pose_scale, &rotations)
    };

    // reject translations that push a joint out of frame
    let mut t = [0.0; 3];
    for _ in 0..1000 {
        t = [
            uniform(rng, cfg.lateral_range_mm),
            uniform(rng, cfg.vertical_range_mm),
            uniform(rng, cfg.depth_range_mm),
        ];
        let inside = perspective_project(&gt_pose, t, cam).is_ok_and(|kp| {
            kp.joints
                .iter()
                .all(|p| (0.0..cam.image_w_px).contains(&p[0]) && (0.0..cam.image_h_px).contains(&p[1]))
        });
        if inside {
            break;
        }
    }
    SampledPerson {
        gt: GlobalPose::new(gt_pose, t),
        predicted_pose,
    }
}

fn observe(exact: &Keypoints2D, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Keypoints2D, Vec<bool>) {
    let noise = Normal::new(0.0, cfg.noise_sigma_px.max(f64::MIN_POSITIVE)).expect("sigma >= 0");
    let joints = exact
        .joints
        .iter()
        .map(|p| {
            if cfg.noise_sigma_px > 0.0 {
                [p[0] + noise.sample(rng), p[1] + noise.sample(rng)]
            } else {
                *p
            }
        })
        .collect();
    let occluded: Vec<bool> = (0..exact.len())
        .map(|_| cfg.occlusion_rate > 0.0 && rng.gen_bool(cfg.occlusion_rate))
        .collect();
    let visible = occluded.iter().map(|o| !o).collect();
    (Keypoints2D { joints, visible }, occluded)
}

pub fn generate_scene(cfg: &SynthConfig) -> Result<Scene> {
    generate_scene_with(cfg, &Skeleton::default_17())
}

/// Scene with predicted 2D (noisy, occluded), predicted root-relative 3D,
/// exact ground-truth 2D and ground-truth global poses.
pub fn generate_scene_with(cfg: &SynthConfig, skeleton: &Skeleton) -> Result<Scene> {
    cfg.validate()?;
    let cam = cfg.camera()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = rng.gen_range(cfg.n_persons[0]..=cfg.n_persons[1]);
    let mut persons = Vec::with_capacity(n);
    for _ in 0..n {
        let sampled = sample_person(cfg, skeleton, &cam, &mut rng);
        let exact = perspective_project(&sampled.gt.pose, sampled.gt.translation_mm, &cam)?;
        let (kp, occluded) = observe(&exact, cfg, &mut rng);
        persons.push(PersonRecord {
            keypoints_2d: Some(kp),
            pose_3d: Some(sampled.predicted_pose),
            gt_keypoints_2d: Some(exact),
            gt_global_pose: Some(sampled.gt),
            occluded: (cfg.occlusion_rate > 0.0).then_some(occluded),
            heatmaps: None,
        });
    }
    Ok(Scene {
        skeleton: skeleton.clone(),
        image_w_px: cfg.image_w_px,
        image_h_px: cfg.image_h_px,
        camera: Some(cam),
        persons,
        sequence: cfg.sequence.clone(),
    })
}

/// Single-person pairs of normalized projected 2D and root-relative 3D.
pub fn generate_lifting_dataset(cfg: &SynthConfig, count: usize) -> Result<Vec<LiftingSample>> {
    generate_lifting_dataset_with(cfg, &Skeleton::default_17(), count)
}

pub fn generate_lifting_dataset_with(
    cfg: &SynthConfig,
    skeleton: &Skeleton,
    count: usize,
) -> Result<Vec<LiftingSample>> {
    if count == 0 {
        return Err(Error::invalid("count", "must be > 0"));
    }
    cfg.validate()?;
    let cam = cfg.camera()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..count)
        .map(|_| {
            let sampled = sample_person(cfg, skeleton, &cam, &mut rng);
            let exact = perspective_project(&sampled.gt.pose, sampled.gt.translation_mm, &cam)?;
            let (kp, _) = observe(&exact, cfg, &mut rng);
            Ok(LiftingSample {
                keypoints: normalize_keypoints(&kp, cfg.image_w_px, cfg.image_h_px),
                pose: sampled.predicted_pose,
            })
        })
        .collect()
}
