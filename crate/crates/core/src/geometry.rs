//! Projections, bone-length sums and root alignment.

use crate::error::{Error, Result};
use crate::pose::{CameraIntrinsics, Keypoints2D, Pose3D};
use crate::skeleton::Skeleton;

/// Minimum camera-space depth a joint may have, in millimetres.
pub const EPS_DEPTH_MM: f64 = 1.0;

/// Pinhole projection of `pose + t`. Every output joint is visible.
pub fn perspective_project(pose: &Pose3D, t: [f64; 3], cam: &CameraIntrinsics) -> Result<Keypoints2D> {
    let joints = pose
        .joints
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let z = p[2] + t[2];
            if !(z > EPS_DEPTH_MM) {
                return Err(Error::DepthTooSmall { joint: j, depth_mm: z });
            }
            Ok([
                cam.focal_px * (p[0] + t[0]) / z + cam.ox_px,
                cam.focal_px * (p[1] + t[1]) / z + cam.oy_px,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Keypoints2D::all_visible(joints))
}

/// Drops depth; the result stays in millimetres.
pub fn orthographic_project(pose: &Pose3D) -> Keypoints2D {
    Keypoints2D::all_visible(pose.joints.iter().map(|p| [p[0], p[1]]).collect())
}

/// Sum of Euclidean bone lengths over all bones, or over the torso subset.
///
/// `visible`, when given, marks usable joints; a selected bone with an
/// unusable endpoint is an error rather than being skipped.
pub fn bone_length_sum<const D: usize>(
    points: &[[f64; D]],
    visible: Option<&[bool]>,
    skeleton: &Skeleton,
    torso_only: bool,
) -> Result<f64> {
    if points.len() != skeleton.n_joints() {
        return Err(Error::ShapeMismatch {
            expected: skeleton.n_joints(),
            got: points.len(),
        });
    }
    let usable = |j: usize| {
        visible.is_none_or(|v| v.get(j).copied().unwrap_or(false)) && points[j].iter().all(|c| c.is_finite())
    };
    let bones = skeleton.bones();
    let selected: Box<dyn Iterator<Item = usize>> = if torso_only {
        Box::new(skeleton.torso_bone_indices().iter().copied())
    } else {
        Box::new(0..bones.len())
    };
    let mut sum = 0.0;
    for b in selected {
        let bone = bones[b];
        for j in [bone.child, bone.parent] {
            if !usable(j) {
                return Err(Error::MissingJoint { joint: j });
            }
        }
        let (a, p) = (&points[bone.child], &points[bone.parent]);
        sum += a.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    }
    Ok(sum)
}

/// Convenience wrapper: torso bone sum of visible 2D keypoints, in pixels.
pub fn torso_sum_2d(kp: &Keypoints2D, skeleton: &Skeleton) -> Result<f64> {
    bone_length_sum(&kp.joints, Some(&kp.visible), skeleton, true)
}

/// Translates both joint arrays so their roots sit at the origin.
pub fn root_align(pred: &[[f64; 3]], gt: &[[f64; 3]], root: usize) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    (shift_root(pred, root), shift_root(gt, root))
}

fn shift_root(joints: &[[f64; 3]], root: usize) -> Vec<[f64; 3]> {
    let r = joints[root];
    joints.iter().map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]]).collect()
}

pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub(crate) fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
