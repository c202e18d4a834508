//! Camera-space placement of root-relative poses.
//!
//! Each person is first placed under a weak-perspective assumption, using
//! the ratio of torso bone-length sums in 3D (orthographic, mm) and 2D (px)
//! as the per-person scale. A shared focal length and all root
//! translations are then refined jointly by minimizing the squared
//! reprojection error of the visible joints, with rotations fixed to
//! identity.

mod problem;
mod refine;

pub use problem::ReprojectionProblem;
pub use refine::refine;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bone_length_sum, orthographic_project, torso_sum_2d};
use crate::pose::{CameraIntrinsics, GlobalPose, Keypoints2D, Pose3D, Scene};
use crate::skeleton::Skeleton;

pub const DEFAULT_FOV_DEGREES: f64 = 60.0;

/// Torso bone sums at or below this many pixels cannot give a scale.
pub const EPS_SCALE_PX: f64 = 1e-6;

/// Residual RMS (px) treated as an exact fit.
pub const ZERO_RESIDUAL_PX: f64 = 1e-10;

/// Minimum number of visible joints for a person to take part in refinement.
pub const MIN_VISIBLE_JOINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementOptions {
    pub init_fov_degrees: f64,
    pub max_iterations: usize,
    /// Stop when the relative decrease of the squared residual falls below this.
    pub residual_tolerance: f64,
    /// Stop when the step norm falls below this, relative to the parameter norm.
    pub step_tolerance: f64,
    pub damping_init: f64,
    /// Focal-length bounds in px; defaults to `[0.2, 20] x image width`.
    pub f_bounds: Option<[f64; 2]>,
    /// Keep the focal length at its initial value.
    pub fix_focal: bool,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            init_fov_degrees: DEFAULT_FOV_DEGREES,
            max_iterations: 200,
            residual_tolerance: 1e-8,
            step_tolerance: 1e-10,
            damping_init: 1e-3,
            f_bounds: None,
            fix_focal: false,
        }
    }
}

impl PlacementOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_fov_degrees > 0.0 && self.init_fov_degrees < 180.0) {
            return Err(Error::invalid("init_fov_degrees", "must be in (0, 180)"));
        }
        if !(self.residual_tolerance > 0.0 && self.step_tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be > 0"));
        }
        if !(self.damping_init > 0.0) {
            return Err(Error::invalid("damping_init", "must be > 0"));
        }
        if let Some([lo, hi]) = self.f_bounds {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::invalid("f_bounds", "need 0 < min <= max"));
            }
        }
        Ok(())
    }

    pub fn focal_bounds(&self, image_w_px: f64) -> [f64; 2] {
        self.f_bounds.unwrap_or([0.2 * image_w_px, 20.0 * image_w_px])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub camera: CameraIntrinsics,
    pub translations_mm: Vec<[f64; 3]>,
    pub global_poses: Vec<GlobalPose>,
    /// RMS per-joint reprojection error before refinement, px.
    pub initial_residual_px: f64,
    pub final_residual_px: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual after each accepted step, starting with the initial value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residual_trace_px: Vec<f64>,
    /// Persons kept at their initial translation (too few visible joints).
    pub held_persons: Vec<usize>,
}

/// One person's input to placement: predicted 2D keypoints (px) and the
/// predicted root-relative pose (mm).
#[derive(Debug, Clone, Copy)]
pub struct PersonObservation<'a> {
    pub keypoints: &'a Keypoints2D,
    pub pose: &'a Pose3D,
}

/// Focal length for a horizontal field of view: `(W/2) / tan(fov/2)`.
pub fn init_focal(image_w_px: f64, fov_degrees: f64) -> Result<f64> {
    if !(fov_degrees > 0.0 && fov_degrees < 180.0) {
        return Err(Error::invalid("fov_degrees", "must be in (0, 180)"));
    }
    if !(image_w_px > 0.0) {
        return Err(Error::invalid("image_w_px", "must be > 0"));
    }
    Ok(0.5 * image_w_px / (0.5 * fov_degrees.to_radians()).tan())
}

/// Weak-perspective root translation:
/// `Z = f S3/S2`, `X = (x - o_x) S3/S2`, `Y = (y - o_y) S3/S2`,
/// with S3 the torso bone sum of the orthographic projection of `pose`
/// and S2 that of the keypoints. Uses the root keypoint, or the centroid
/// of visible torso joints when the root is not visible.
pub fn weak_perspective_init(
    kp: &Keypoints2D,
    pose: &Pose3D,
    cam: &CameraIntrinsics,
    skeleton: &Skeleton,
) -> Result<[f64; 3]> {
    let s2d = torso_sum_2d(kp, skeleton)?;
    if !(s2d > EPS_SCALE_PX) {
        return Err(Error::DegenerateScale { s2d_px: s2d });
    }
    let ortho = orthographic_project(pose);
    let s3d = bone_length_sum(&ortho.joints, None, skeleton, true)?;
    let ratio = s3d / s2d;
    let root = skeleton.root();

    let (anchor_px, anchor_mm) = if kp.is_visible(root) {
        (kp.joints[root], [0.0, 0.0])
    } else {
        let joints: Vec<usize> = skeleton
            .torso_joints()
            .into_iter()
            .filter(|&j| kp.is_visible(j))
            .collect();
        let n = joints.len() as f64;
        let mean = |f: &dyn Fn(usize) -> f64| joints.iter().map(|&j| f(j)).sum::<f64>() / n;
        (
            [mean(&|j| kp.joints[j][0]), mean(&|j| kp.joints[j][1])],
            [mean(&|j| pose.joints[j][0]), mean(&|j| pose.joints[j][1])],
        )
    };
    Ok([
        (anchor_px[0] - cam.ox_px) * ratio - anchor_mm[0],
        (anchor_px[1] - cam.oy_px) * ratio - anchor_mm[1],
        cam.focal_px * ratio,
    ])
}

/// Initial camera for a scene: principal point at the image centre and a
/// focal length from the configured field of view.
pub fn initial_camera(image_w_px: f64, image_h_px: f64, opts: &PlacementOptions) -> Result<CameraIntrinsics> {
    CameraIntrinsics::centered(init_focal(image_w_px, opts.init_fov_degrees)?, image_w_px, image_h_px)
}

/// Placement of every person in `scene` that carries both predicted 2D
/// keypoints and a predicted 3D pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlacement {
    /// Scene person index for each placed entry.
    pub person_indices: Vec<usize>,
    pub result: PlacementResult,
}

pub fn place_scene(scene: &Scene, opts: &PlacementOptions) -> Result<ScenePlacement> {
    opts.validate()?;
    let cam = initial_camera(scene.image_w_px, scene.image_h_px, opts)?;
    let mut indices = Vec::new();
    let mut obs = Vec::new();
    for (i, p) in scene.persons.iter().enumerate() {
        if let (Some(kp), Some(pose)) = (&p.keypoints_2d, &p.pose_3d) {
            indices.push(i);
            obs.push(PersonObservation { keypoints: kp, pose });
        }
    }
    if obs.is_empty() {
        return Err(Error::NoVisibleJoints);
    }
    let t_init = obs
        .iter()
        .map(|o| weak_perspective_init(o.keypoints, o.pose, &cam, &scene.skeleton))
        .collect::<Result<Vec<_>>>()?;
    let result = refine(&obs, &cam, &t_init, opts)?;
    Ok(ScenePlacement {
        person_indices: indices,
        result,
    })
}
