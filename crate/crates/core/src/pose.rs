//! Pose, keypoint, camera and scene value types.
//!
//! 3D quantities are millimetres in camera axes (x right, y down, z forward);
//! 2D quantities are pixels with the origin at the top-left image corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::PersonHeatmaps;
use crate::skeleton::Skeleton;

/// Root-relative 3D joints in millimetres; the root joint sits at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    #[serde(rename = "joints_mm")]
    pub joints: Vec<[f64; 3]>,
}

impl Pose3D {
    /// Wraps already root-relative joints, checking the invariants.
    pub fn new(joints: Vec<[f64; 3]>, skeleton: &Skeleton) -> Result<Self> {
        let pose = Self { joints };
        pose.validate(skeleton)?;
        Ok(pose)
    }

    /// Subtracts the root position from camera- or world-space joints.
    pub fn from_global(joints: &[[f64; 3]], skeleton: &Skeleton) -> Result<Self> {
        if joints.len() != skeleton.n_joints() {
            return Err(Error::ShapeMismatch {
                expected: skeleton.n_joints(),
                got: joints.len(),
            });
        }
        let r = joints[skeleton.root()];
        let joints = joints.iter().map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]]).collect();
        Self::new(joints, skeleton)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            joints: vec![[0.0; 3]; n],
        }
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.joints.len() != skeleton.n_joints() {
            return Err(Error::ShapeMismatch {
                expected: skeleton.n_joints(),
                got: self.joints.len(),
            });
        }
        if self.joints.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("joints_mm", "non-finite coordinate"));
        }
        if self.joints[skeleton.root()] != [0.0; 3] {
            return Err(Error::invalid("joints_mm", "root joint is not at the origin"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// max z minus min z over all joints.
    pub fn depth_extent(&self) -> f64 {
        let (lo, hi) = self
            .joints
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[2]), hi.max(p[2]))
            });
        if self.joints.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Image-space joints in pixels with per-joint visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    #[serde(rename = "joints_px")]
    pub joints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Keypoints2D {
    pub fn all_visible(joints: Vec<[f64; 2]>) -> Self {
        let visible = vec![true; joints.len()];
        Self { joints, visible }
    }

    pub fn new(joints: Vec<[f64; 2]>, visible: Vec<bool>) -> Result<Self> {
        let kp = Self { joints, visible };
        kp.validate(kp.joints.len())?;
        Ok(kp)
    }

    pub fn validate(&self, n_joints: usize) -> Result<()> {
        if self.joints.len() != n_joints {
            return Err(Error::ShapeMismatch {
                expected: n_joints,
                got: self.joints.len(),
            });
        }
        if self.visible.len() != n_joints {
            return Err(Error::ShapeMismatch {
                expected: n_joints,
                got: self.visible.len(),
            });
        }
        for (p, &v) in self.joints.iter().zip(&self.visible) {
            if v && !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::invalid("joints_px", "visible joint is not finite"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn n_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn is_visible(&self, joint: usize) -> bool {
        self.visible.get(joint).copied().unwrap_or(false)
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub ox_px: f64,
    pub oy_px: f64,
    pub image_w_px: f64,
    pub image_h_px: f64,
}

impl CameraIntrinsics {
    pub fn new(focal_px: f64, ox_px: f64, oy_px: f64, image_w_px: f64, image_h_px: f64) -> Result<Self> {
        let cam = Self {
            focal_px,
            ox_px,
            oy_px,
            image_w_px,
            image_h_px,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Principal point at the image centre.
    pub fn centered(focal_px: f64, image_w_px: f64, image_h_px: f64) -> Result<Self> {
        Self::new(focal_px, image_w_px / 2.0, image_h_px / 2.0, image_w_px, image_h_px)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::invalid("focal_px", "must be positive"));
        }
        if !(self.image_w_px > 0.0 && self.image_h_px > 0.0) {
            return Err(Error::invalid("image size", "must be positive"));
        }
        if !(self.ox_px.is_finite() && self.oy_px.is_finite()) {
            return Err(Error::invalid("principal point", "not finite"));
        }
        Ok(())
    }
}

/// Root-relative pose placed in camera coordinates by a root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GlobalPoseRepr", into = "GlobalPoseRepr")]
pub struct GlobalPose {
    pub pose: Pose3D,
    pub translation_mm: [f64; 3],
}

/// On-disk form: `{"joints_mm": [...], "translation_mm": [x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct GlobalPoseRepr {
    joints_mm: Vec<[f64; 3]>,
    translation_mm: [f64; 3],
}

impl From<GlobalPoseRepr> for GlobalPose {
    fn from(r: GlobalPoseRepr) -> Self {
        Self::new(Pose3D { joints: r.joints_mm }, r.translation_mm)
    }
}

impl From<GlobalPose> for GlobalPoseRepr {
    fn from(g: GlobalPose) -> Self {
        Self {
            joints_mm: g.pose.joints,
            translation_mm: g.translation_mm,
        }
    }
}

impl GlobalPose {
    pub fn new(pose: Pose3D, translation_mm: [f64; 3]) -> Self {
        Self { pose, translation_mm }
    }

    /// Camera-space joints, `pose + translation`.
    pub fn joints_global(&self) -> Vec<[f64; 3]> {
        let t = self.translation_mm;
        self.pose
            .joints
            .iter()
            .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
            .collect()
    }
}

/// Everything known about one person in an image: predictions and, when
/// available, ground truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints_2d: Option<Keypoints2D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_3d: Option<Pose3D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_keypoints_2d: Option<Keypoints2D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_global_pose: Option<GlobalPose>,
    /// Per-joint occlusion flags for the ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluded: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmaps: Option<PersonHeatmaps>,
}

impl PersonRecord {
    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        let n = skeleton.n_joints();
        if self.keypoints_2d.is_none()
            && self.pose_3d.is_none()
            && self.gt_keypoints_2d.is_none()
            && self.gt_global_pose.is_none()
            && self.heatmaps.is_none()
        {
            return Err(Error::invalid("person", "no prediction or ground truth"));
        }
        if let Some(kp) = &self.keypoints_2d {
            kp.validate(n)?;
        }
        if let Some(kp) = &self.gt_keypoints_2d {
            kp.validate(n)?;
        }
        if let Some(p) = &self.pose_3d {
            p.validate(skeleton)?;
        }
        if let Some(g) = &self.gt_global_pose {
            g.pose.validate(skeleton)?;
            if g.translation_mm.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("translation_mm", "non-finite"));
            }
        }
        if let Some(o) = &self.occluded {
            if o.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: o.len(),
                });
            }
        }
        if let Some(h) = &self.heatmaps {
            if h.heatmap.n_joints() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: h.heatmap.n_joints(),
                });
            }
        }
        Ok(())
    }
}

/// One image: its size, optional ground-truth camera and the people in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub skeleton: Skeleton,
    pub image_w_px: f64,
    pub image_h_px: f64,
    pub camera: Option<CameraIntrinsics>,
    pub persons: Vec<PersonRecord>,
    pub sequence: Option<String>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.image_w_px > 0.0 && self.image_h_px > 0.0) {
            return Err(Error::invalid("image_size_px", "must be positive"));
        }
        if let Some(c) = &self.camera {
            c.validate()?;
        }
        for p in &self.persons {
            p.validate(&self.skeleton)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_root_must_be_origin() {
        let s = Skeleton::default_17();
        let mut joints = vec![[1.0, 2.0, 3.0]; 17];
        assert!(Pose3D::new(joints.clone(), &s).is_err());
        joints[0] = [0.0; 3];
        assert!(Pose3D::new(joints.clone(), &s).is_ok());
        joints[3][1] = f64::NAN;
        assert!(Pose3D::new(joints, &s).is_err());
    }

    #[test]
    fn from_global_moves_root() {
        let s = Skeleton::default_17();
        let joints: Vec<[f64; 3]> = (0..17).map(|i| [i as f64, 100.0, 5000.0 + i as f64]).collect();
        let p = Pose3D::from_global(&joints, &s).unwrap();
        assert_eq!(p.joints[0], [0.0; 3]);
        assert_eq!(p.joints[5], [5.0, 0.0, 5.0]);
        assert_eq!(p.depth_extent(), 16.0);
    }

    #[test]
    fn invisible_keypoints_may_be_non_finite() {
        let kp = Keypoints2D::new(vec![[1.0, 2.0], [f64::NAN, 0.0]], vec![true, false]).unwrap();
        assert_eq!(kp.n_visible(), 1);
        assert!(Keypoints2D::new(vec![[1.0, 2.0], [f64::NAN, 0.0]], vec![true, true]).is_err());
    }

    #[test]
    fn camera_invariants() {
        assert!(CameraIntrinsics::centered(0.0, 100.0, 100.0).is_err());
        assert!(CameraIntrinsics::centered(10.0, 0.0, 100.0).is_err());
        let c = CameraIntrinsics::centered(10.0, 640.0, 480.0).unwrap();
        assert_eq!((c.ox_px, c.oy_px), (320.0, 240.0));
    }

    #[test]
    fn global_pose_adds_translation() {
        let mut pose = Pose3D::zeros(17);
        pose.joints[1] = [0.0, -100.0, 10.0];
        let g = GlobalPose::new(pose, [1.0, 2.0, 3000.0]);
        let j = g.joints_global();
        assert_eq!(j[0], [1.0, 2.0, 3000.0]);
        assert_eq!(j[1], [1.0, -98.0, 3010.0]);
    }

    #[test]
    fn empty_person_rejected() {
        let s = Skeleton::default_17();
        assert!(PersonRecord::default().validate(&s).is_err());
    }
}
