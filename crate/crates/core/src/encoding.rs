//! Channel-sparse 3D pose encoding.
//!
//! The encoding vector at a joint has `3 * J` channels, one 3-channel block per
//! joint holding that joint's position relative to its kinematic parent. At
//! joint `j` only the blocks of the bones meeting at `j` are supervised: its
//! own block (bone to the parent) and the blocks of its children.

use nalgebra::Vector3;

use crate::skeleton::{Joint, JointSet, Pose3D, NUM_JOINTS};

pub const ENCODING_DIM: usize = 3 * NUM_JOINTS;

pub type Encoding = [f64; ENCODING_DIM];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    #[default]
    ChannelSparse,
    /// Every bone block supervised at every joint (ablation baseline).
    ChannelDense,
}

/// Supervised channel blocks per joint location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityMask {
    pub blocks: Vec<Vec<usize>>,
}

impl SparsityMask {
    pub fn supervises(&self, joint: usize, block: usize) -> bool {
        self.blocks[joint].contains(&block)
    }

    /// Joint locations whose encoding carries `block`.
    pub fn carriers(&self, block: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.blocks.len()).filter(move |&j| self.supervises(j, block))
    }
}

/// `{j} ∪ children(j)` at every joint; the root has no parent-relative bone so
/// only its children are supervised there.
pub fn build_mask(joints: &JointSet) -> SparsityMask {
    let blocks = (0..joints.len())
        .map(|j| {
            let mut b = Vec::with_capacity(1 + joints.children[j].len());
            if joints.parent[j].is_some() {
                b.push(j);
            }
            b.extend(joints.children[j].iter().copied());
            b.sort_unstable();
            b
        })
        .collect();
    SparsityMask { blocks }
}

/// All non-root bone blocks at every joint.
pub fn build_dense_mask(joints: &JointSet) -> SparsityMask {
    let all: Vec<usize> = (0..joints.len())
        .filter(|&j| joints.parent[j].is_some())
        .collect();
    SparsityMask {
        blocks: vec![all; joints.len()],
    }
}

pub fn build_mode_mask(joints: &JointSet, mode: EncodingMode) -> SparsityMask {
    match mode {
        EncodingMode::ChannelSparse => build_mask(joints),
        EncodingMode::ChannelDense => build_dense_mask(joints),
    }
}

pub fn bone_vector(pose: &Pose3D, joint: Joint) -> Vector3<f64> {
    match joint.parent() {
        Some(p) => pose[joint.index()] - pose[p.index()],
        None => Vector3::zeros(),
    }
}

/// Encoding vectors for every joint location. Unsupervised blocks are zero.
pub fn encode(pose: &Pose3D, mask: &SparsityMask) -> Vec<Encoding> {
    (0..NUM_JOINTS)
        .map(|j| {
            let mut l = [0.0; ENCODING_DIM];
            for &m in &mask.blocks[j] {
                let joint = Joint::from_index(m).expect("mask indexes the standard joint set");
                let v = bone_vector(pose, joint);
                l[3 * m..3 * m + 3].copy_from_slice(v.as_slice());
            }
            l
        })
        .collect()
}

pub fn block(l: &Encoding, m: usize) -> Vector3<f64> {
    Vector3::new(l[3 * m], l[3 * m + 1], l[3 * m + 2])
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedBones {
    /// Averaged parent-relative bone vector, `None` when no observed joint
    /// carries the bone.
    pub bones: [Option<Vector3<f64>>; NUM_JOINTS],
    /// Number of copies averaged per bone.
    pub redundancy: [usize; NUM_JOINTS],
    /// Largest pairwise distance between copies (zero for a single copy).
    pub disagreement: [f64; NUM_JOINTS],
}

impl DecodedBones {
    pub fn recovered(&self) -> usize {
        self.bones.iter().filter(|b| b.is_some()).count()
    }

    pub fn missing(&self) -> Vec<Joint> {
        Joint::ALL
            .into_iter()
            .skip(1)
            .filter(|j| self.bones[j.index()].is_none())
            .collect()
    }
}

/// Collects every supervised copy of each bone from the observed joints.
pub fn decode_bones(observations: &[(usize, Encoding)], mask: &SparsityMask) -> DecodedBones {
    let mut copies: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); NUM_JOINTS];
    for (j, l) in observations {
        for &m in &mask.blocks[*j] {
            copies[m].push(block(l, m));
        }
    }
    let mut out = DecodedBones {
        bones: [None; NUM_JOINTS],
        redundancy: [0; NUM_JOINTS],
        disagreement: [0.0; NUM_JOINTS],
    };
    for (m, c) in copies.iter().enumerate() {
        if c.is_empty() {
            continue;
        }
        let mean = c.iter().sum::<Vector3<f64>>() / c.len() as f64;
        let mut worst: f64 = 0.0;
        for a in 0..c.len() {
            for b in a + 1..c.len() {
                worst = worst.max((c[a] - c[b]).norm());
            }
        }
        out.bones[m] = Some(mean);
        out.redundancy[m] = c.len();
        out.disagreement[m] = worst;
    }
    out
}
