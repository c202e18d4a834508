//! Versioned JSON file formats.
//!
//! Every reader reports schema problems with the JSON path of the offending
//! field. In strict mode unknown fields are errors; otherwise they are
//! ignored.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalFrame, EvalPerson};
use crate::lifting::LiftingSample;
use crate::placement::ScenePlacement;
use crate::pose::{CameraIntrinsics, Keypoints2D, PersonRecord, Pose3D, Scene};
use crate::skeleton::Skeleton;

pub const FORMAT_VERSION: u32 = 1;

/// Parses JSON into `T`, collecting unknown fields. With `strict`, the
/// first unknown field is reported as a schema error.
pub fn parse_json<T: DeserializeOwned>(text: &str, strict: bool) -> Result<T> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = {
        let mut record = |path: serde_ignored::Path<'_>| unknown.push(format_path(&path));
        let ignored = serde_ignored::Deserializer::new(&mut de, &mut record);
        serde_path_to_error::deserialize(ignored).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?
    };
    de.end().map_err(|e| Error::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    if strict {
        if let Some(path) = unknown.first() {
            return Err(Error::Schema {
                path: path.clone(),
                message: "unknown field".into(),
            });
        }
    }
    Ok(value)
}

/// Renders an ignored-field path in the same `a.b[0].c` form as
/// deserialization errors.
fn format_path(path: &serde_ignored::Path<'_>) -> String {
    use serde_ignored::Path;
    match path {
        Path::Root => String::new(),
        Path::Seq { parent, index } => format!("{}[{index}]", format_path(parent)),
        Path::Map { parent, key } => {
            let p = format_path(parent);
            if p.is_empty() {
                key.clone()
            } else {
                format!("{p}.{key}")
            }
        }
        Path::Some { parent } | Path::NewtypeStruct { parent } | Path::NewtypeVariant { parent } => format_path(parent),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, strict: bool) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse_json(&text, strict)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("in-memory values serialize")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json(value);
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Schema {
            path: "format_version".into(),
            message: format!("unsupported version {found}, expected {FORMAT_VERSION}"),
        });
    }
    Ok(())
}

/// `"default"` for the built-in 17-joint skeleton, or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SkeletonRef {
    Named(String),
    Inline(Skeleton),
}

impl Default for SkeletonRef {
    fn default() -> Self {
        SkeletonRef::Named("default".into())
    }
}

impl SkeletonRef {
    pub fn resolve(&self) -> Result<Skeleton> {
        match self {
            SkeletonRef::Named(name) if name == "default" => Ok(Skeleton::default_17()),
            SkeletonRef::Named(name) => Err(Error::Schema {
                path: "skeleton".into(),
                message: format!("unknown skeleton `{name}`"),
            }),
            SkeletonRef::Inline(s) => Ok(s.clone()),
        }
    }

    pub fn for_skeleton(s: &Skeleton) -> Self {
        if *s == Skeleton::default_17() {
            SkeletonRef::default()
        } else {
            SkeletonRef::Inline(s.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub format_version: u32,
    #[serde(default)]
    pub skeleton: SkeletonRef,
    pub image_size_px: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraIntrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    pub persons: Vec<PersonRecord>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            skeleton: SkeletonRef::for_skeleton(&scene.skeleton),
            image_size_px: [scene.image_w_px, scene.image_h_px],
            camera: scene.camera,
            sequence: scene.sequence.clone(),
            persons: scene.persons.clone(),
        }
    }

    pub fn into_scene(self) -> Result<Scene> {
        check_version(self.format_version)?;
        let scene = Scene {
            skeleton: self.skeleton.resolve()?,
            image_w_px: self.image_size_px[0],
            image_h_px: self.image_size_px[1],
            camera: self.camera,
            persons: self.persons,
            sequence: self.sequence,
        };
        scene.validate()?;
        Ok(scene)
    }
}

pub fn parse_scene(text: &str, strict: bool) -> Result<Scene> {
    parse_json::<SceneFile>(text, strict)?.into_scene()
}

pub fn load_scene(path: &Path, strict: bool) -> Result<Scene> {
    read_json::<SceneFile>(path, strict)?.into_scene()
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_json(path, &SceneFile::from_scene(scene))
}

/// Placement output: the placement plus the format version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedFile {
    pub format_version: u32,
    pub placement: ScenePlacement,
}

impl PlacedFile {
    pub fn new(placement: ScenePlacement) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            placement,
        }
    }

    pub fn load(path: &Path) -> Result<ScenePlacement> {
        let f: PlacedFile = read_json(path, false)?;
        check_version(f.format_version)?;
        Ok(f.placement)
    }
}

/// Frames of persons for the evaluator; one file holds predictions,
/// another the ground truth, aligned frame by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSetFile {
    pub format_version: u32,
    #[serde(default)]
    pub skeleton: SkeletonRef,
    pub frames: Vec<PoseSetFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSetFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    pub persons: Vec<EvalPerson>,
}

impl PoseSetFile {
    pub fn load(path: &Path, strict: bool) -> Result<(Skeleton, Vec<PoseSetFrame>)> {
        let f: PoseSetFile = read_json(path, strict)?;
        check_version(f.format_version)?;
        Ok((f.skeleton.resolve()?, f.frames))
    }

    /// Predicted and ground-truth sets from scenes.
    pub fn from_scenes(scenes: &[Scene]) -> (PoseSetFile, PoseSetFile) {
        let skeleton = scenes
            .first()
            .map(|s| SkeletonRef::for_skeleton(&s.skeleton))
            .unwrap_or_default();
        let (pred, gt) = scenes
            .iter()
            .map(|s| {
                let f = EvalFrame::from_scene(s);
                (
                    PoseSetFrame {
                        sequence: f.sequence.clone(),
                        persons: f.predictions,
                    },
                    PoseSetFrame {
                        sequence: f.sequence,
                        persons: f.ground_truths,
                    },
                )
            })
            .unzip();
        let mk = |frames| PoseSetFile {
            format_version: FORMAT_VERSION,
            skeleton: skeleton.clone(),
            frames,
        };
        (mk(pred), mk(gt))
    }
}

/// Pairs prediction and ground-truth frames by position; the sequence name
/// comes from the ground truth.
pub fn pair_frames(pred: Vec<PoseSetFrame>, gt: Vec<PoseSetFrame>) -> Result<Vec<EvalFrame>> {
    if pred.len() != gt.len() {
        return Err(Error::Schema {
            path: "frames".into(),
            message: format!("{} prediction frames vs {} ground-truth frames", pred.len(), gt.len()),
        });
    }
    Ok(pred
        .into_iter()
        .zip(gt)
        .map(|(p, g)| EvalFrame {
            sequence: g.sequence.or(p.sequence),
            predictions: p.persons,
            ground_truths: g.persons,
        })
        .collect())
}

/// Lifting training data. Keypoints are already normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format_version: u32,
    pub image_size_px: [f64; 2],
    pub samples: Vec<DatasetSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub keypoints_norm: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
    pub joints_mm: Vec<[f64; 3]>,
}

impl DatasetFile {
    pub fn new(image_size_px: [f64; 2], samples: &[LiftingSample]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            image_size_px,
            samples: samples
                .iter()
                .map(|s| DatasetSample {
                    keypoints_norm: s.keypoints.joints.clone(),
                    visible: s.keypoints.visible.clone(),
                    joints_mm: s.pose.joints.clone(),
                })
                .collect(),
        }
    }

    pub fn into_samples(self) -> Result<Vec<LiftingSample>> {
        check_version(self.format_version)?;
        self.samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let keypoints = Keypoints2D {
                    joints: s.keypoints_norm,
                    visible: s.visible,
                };
                keypoints.validate(s.joints_mm.len()).map_err(|e| Error::Schema {
                    path: format!("samples[{i}]"),
                    message: e.to_string(),
                })?;
                Ok(LiftingSample {
                    keypoints,
                    pose: Pose3D { joints: s.joints_mm },
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SynthConfig};
    use proptest::prelude::*;

    fn scene() -> Scene {
        generate_scene(&SynthConfig {
            seed: 5,
            noise_sigma_px: 1.5,
            occlusion_rate: 0.2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn scene_round_trip() {
        let s = scene();
        let text = to_json(&SceneFile::from_scene(&s));
        let back = parse_scene(&text, true).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn strict_rejects_unknown_fields() {
        let s = scene();
        let mut v: serde_json::Value = serde_json::to_value(SceneFile::from_scene(&s)).unwrap();
        v["persons"][0]["gt_global_pose"]["colour"] = serde_json::json!("red");
        let text = v.to_string();
        assert!(parse_scene(&text, false).is_ok());
        match parse_scene(&text, true) {
            Err(Error::Schema { path, .. }) => assert!(path.contains("persons[0].gt_global_pose.colour"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_error_carries_path() {
        let text = r#"{"format_version": 1, "image_size_px": [640, 480], "persons": [{"pose_3d": {"joints_mm": [[0, 0, "x"]]}}]}"#;
        match parse_scene(text, false) {
            Err(Error::Schema { path, .. }) => assert!(path.starts_with("persons[0].pose_3d.joints_mm"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_version_and_skeleton() {
        let text = r#"{"format_version": 9, "image_size_px": [640, 480], "persons": []}"#;
        assert!(matches!(parse_scene(text, false), Err(Error::Schema { .. })));
        let text = r#"{"format_version": 1, "skeleton": "coco", "image_size_px": [640, 480], "persons": []}"#;
        assert!(matches!(parse_scene(text, false), Err(Error::Schema { .. })));
        let text = r#"{"format_version": 1, "skeleton": {"joints": ["a","b"], "parents": [-1, 0], "root": 0, "torso_bones": [[0,1]]}, "image_size_px": [640, 480], "persons": []}"#;
        assert_eq!(parse_scene(text, true).unwrap().skeleton.n_joints(), 2);
    }

    #[test]
    fn pose_sets_from_scene() {
        let s = scene();
        let (pred, gt) = PoseSetFile::from_scenes(std::slice::from_ref(&s));
        let frames = pair_frames(pred.frames, gt.frames).unwrap();
        assert_eq!(frames[0].predictions.len(), s.persons.len());
        assert_eq!(frames[0].ground_truths.len(), s.persons.len());
        assert!(pair_frames(vec![], vec![frames_to_set(&frames[0])]).is_err());
    }

    fn frames_to_set(f: &EvalFrame) -> PoseSetFrame {
        PoseSetFrame {
            sequence: None,
            persons: f.ground_truths.clone(),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let data = crate::synth::generate_lifting_dataset(&SynthConfig::default(), 5).unwrap();
        let file = DatasetFile::new([1280.0, 960.0], &data);
        let back: DatasetFile = parse_json(&to_json(&file), true).unwrap();
        assert_eq!(back.into_samples().unwrap(), data);
    }

    proptest! {
        #[test]
        fn person_record_round_trip(joints in proptest::collection::vec(proptest::array::uniform3(-1e4..1e4f64), 17),
                                    kp in proptest::collection::vec(proptest::array::uniform2(-1e4..1e4f64), 17),
                                    vis in proptest::collection::vec(any::<bool>(), 17),
                                    t in proptest::array::uniform3(-1e4..1e4f64)) {
            let mut joints = joints;
            joints[0] = [0.0; 3];
            let rec = PersonRecord {
                keypoints_2d: Some(Keypoints2D { joints: kp.clone(), visible: vis.clone() }),
                pose_3d: Some(Pose3D { joints: joints.clone() }),
                gt_keypoints_2d: None,
                gt_global_pose: Some(crate::pose::GlobalPose::new(Pose3D { joints }, t)),
                occluded: Some(vis),
                heatmaps: None,
            };
            let back: PersonRecord = parse_json(&to_json(&rec), true).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}
