//! Geometry and evaluation core for multi-person monocular 3D pose
//! estimation: heatmap decoding, 2D-to-3D lifting, camera-space placement
//! with a jointly estimated focal length, and multi-person PCK/MPJPE
//! evaluation.

// negated comparisons also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod heatmap;
pub mod io;
pub mod lifting;
pub mod pipeline;
pub mod placement;
pub mod pose;
pub mod render;
pub mod skeleton;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use pose::{CameraIntrinsics, GlobalPose, Keypoints2D, PersonRecord, Pose3D, Scene};
pub use skeleton::Skeleton;
