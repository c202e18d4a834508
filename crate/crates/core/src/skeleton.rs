//! Joint hierarchy shared by every pose in a scene.
//!
//! Bones are indexed by position in [`Skeleton::bones`]: one bone per
//! non-root joint, connecting it to its parent, in joint order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    pub child: usize,
    pub parent: usize,
}

/// Joint names, parent links and the torso subset used for scale estimates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonConfig", into = "SkeletonConfig")]
pub struct Skeleton {
    joint_names: Vec<String>,
    parent_of: Vec<Option<usize>>,
    root: usize,
    bones: Vec<Bone>,
    torso_bones: Vec<usize>,
}

/// On-disk form: `{"joints": [...], "parents": [...], "root": i, "torso_bones": [[a,b], ...]}`.
/// The root's parent entry is `-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonConfig {
    pub joints: Vec<String>,
    pub parents: Vec<i64>,
    pub root: usize,
    pub torso_bones: Vec<[usize; 2]>,
}

pub mod joints {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const NOSE: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_SHOULDER: usize = 8;
    pub const R_ELBOW: usize = 9;
    pub const R_WRIST: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_HIP: usize = 14;
    pub const R_KNEE: usize = 15;
    pub const R_ANKLE: usize = 16;
}

const DEFAULT_NAMES: [&str; 17] = [
    "pelvis",
    "spine",
    "neck",
    "head",
    "nose",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
];

const DEFAULT_PARENTS: [i64; 17] = [-1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15];

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        parent_of: Vec<Option<usize>>,
        root: usize,
        torso_pairs: &[[usize; 2]],
    ) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if parent_of.len() != n {
            return Err(Error::InvalidSkeleton(format!(
                "{} parents for {} joints",
                parent_of.len(),
                n
            )));
        }
        if root >= n {
            return Err(Error::InvalidSkeleton(format!("root {root} out of range")));
        }
        for (j, p) in parent_of.iter().enumerate() {
            match p {
                None if j != root => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {j} has no parent but is not the root"
                    )))
                }
                Some(_) if j == root => return Err(Error::InvalidSkeleton("root must not have a parent".into())),
                Some(p) if *p >= n => return Err(Error::InvalidSkeleton(format!("joint {j} parent {p} out of range"))),
                _ => {}
            }
        }
        // every joint must reach the root in fewer than n hops
        for start in 0..n {
            let mut j = start;
            let mut hops = 0;
            while let Some(p) = parent_of[j] {
                j = p;
                hops += 1;
                if hops > n {
                    return Err(Error::InvalidSkeleton(format!("cycle through joint {start}")));
                }
            }
        }

        let bones: Vec<Bone> = parent_of
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|parent| Bone { child, parent }))
            .collect();

        if torso_pairs.is_empty() {
            return Err(Error::InvalidSkeleton("torso bone set is empty".into()));
        }
        let mut torso_bones = Vec::with_capacity(torso_pairs.len());
        for &[a, b] in torso_pairs {
            let idx = bones
                .iter()
                .position(|bone| (bone.child == a && bone.parent == b) || (bone.child == b && bone.parent == a))
                .ok_or_else(|| Error::InvalidSkeleton(format!("torso pair [{a},{b}] is not a bone")))?;
            if !torso_bones.contains(&idx) {
                torso_bones.push(idx);
            }
        }

        Ok(Self {
            joint_names,
            parent_of,
            root,
            bones,
            torso_bones,
        })
    }

    /// 17-joint body: pelvis root, spine, neck, head, nose, arms and legs.
    /// Torso bones are pelvis-spine, spine-neck, both neck-shoulder and
    /// both pelvis-hip links.
    pub fn default_17() -> Self {
        use joints::*;
        let cfg = SkeletonConfig {
            joints: DEFAULT_NAMES.iter().map(|s| s.to_string()).collect(),
            parents: DEFAULT_PARENTS.to_vec(),
            root: PELVIS,
            torso_bones: vec![
                [PELVIS, SPINE],
                [SPINE, NECK],
                [NECK, L_SHOULDER],
                [NECK, R_SHOULDER],
                [PELVIS, L_HIP],
                [PELVIS, R_HIP],
            ],
        };
        Self::try_from(cfg).expect("default skeleton is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::io::parse_json(text, false)
    }

    pub fn n_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        self.parent_of[joint]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn torso_bone_indices(&self) -> &[usize] {
        &self.torso_bones
    }

    pub fn torso_bones(&self) -> impl Iterator<Item = Bone> + '_ {
        self.torso_bones.iter().map(|&i| self.bones[i])
    }

    /// Joints touched by at least one torso bone, in ascending order.
    pub fn torso_joints(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.torso_bones().flat_map(|b| [b.child, b.parent]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Joint order such that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.n_joints();
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![self.root];
        while let Some(j) = stack.pop() {
            order.push(j);
            for child in (0..n).rev() {
                if self.parent_of[child] == Some(j) {
                    stack.push(child);
                }
            }
        }
        order
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::default_17()
    }
}

impl TryFrom<SkeletonConfig> for Skeleton {
    type Error = Error;

    fn try_from(cfg: SkeletonConfig) -> Result<Self> {
        let parents = cfg
            .parents
            .iter()
            .enumerate()
            .map(|(j, &p)| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::InvalidSkeleton(format!("joint {j} has parent {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Skeleton::new(cfg.joints, parents, cfg.root, &cfg.torso_bones)
    }
}

impl From<Skeleton> for SkeletonConfig {
    fn from(s: Skeleton) -> Self {
        let torso_bones = s
            .torso_bones
            .iter()
            .map(|&i| [s.bones[i].parent, s.bones[i].child])
            .collect();
        SkeletonConfig {
            parents: s.parent_of.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            joints: s.joint_names,
            root: s.root,
            torso_bones,
        }
    }
}
