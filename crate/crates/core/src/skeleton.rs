//! Canonical joint set, the 29-DOF pose parameterization, forward kinematics
//! with an analytic Jacobian, and the pinhole camera.
//!
//! Conventions:
//! - Skeleton frame: `+y` up, `+x` towards the subject's left, `+z` forward.
//! - Every joint with rotational DOF owns intrinsic Euler angles applied in
//!   Z-X-Y order (a subset of the axes for 1- and 2-DOF joints). A joint's
//!   rotation moves its descendants, never the joint itself.
//! - Forward kinematics works on a unit-height skeleton. Metric world
//!   positions are `translation + height * root_relative`.

use nalgebra::{Matrix2x3, Matrix3, Rotation3, SMatrix, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 18;
pub const NUM_DOF: usize = 29;
pub const GLOBAL_DOF: usize = 6;
pub const NUM_LOCAL_DOF: usize = NUM_DOF - GLOBAL_DOF;

/// Jacobian of all joint positions (stacked x, y, z per joint) w.r.t. θ.
pub type FkJacobian = SMatrix<f64, { NUM_JOINTS * 3 }, NUM_DOF>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Pelvis,
    Spine,
    Neck,
    Head,
    LShoulder,
    LElbow,
    LWrist,
    RShoulder,
    RElbow,
    RWrist,
    LHip,
    LKnee,
    LAnkle,
    LFootTip,
    RHip,
    RKnee,
    RAnkle,
    RFootTip,
}

impl Joint {
    /// All joints in index order; parents always precede children.
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Pelvis,
        Joint::Spine,
        Joint::Neck,
        Joint::Head,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
        Joint::LHip,
        Joint::LKnee,
        Joint::LAnkle,
        Joint::LFootTip,
        Joint::RHip,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::RFootTip,
    ];

    pub const ROOT: Joint = Joint::Pelvis;

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Joint> {
        Self::ALL.get(i).copied()
    }

    pub fn parent(self) -> Option<Joint> {
        use Joint::*;
        Some(match self {
            Pelvis => return None,
            Spine => Pelvis,
            Neck => Spine,
            Head => Neck,
            LShoulder => Neck,
            LElbow => LShoulder,
            LWrist => LElbow,
            RShoulder => Neck,
            RElbow => RShoulder,
            RWrist => RElbow,
            LHip => Pelvis,
            LKnee => LHip,
            LAnkle => LKnee,
            LFootTip => LAnkle,
            RHip => Pelvis,
            RKnee => RHip,
            RAnkle => RKnee,
            RFootTip => RAnkle,
        })
    }

    pub fn name(self) -> &'static str {
        use Joint::*;
        match self {
            Pelvis => "pelvis",
            Spine => "spine",
            Neck => "neck",
            Head => "head",
            LShoulder => "l_shoulder",
            LElbow => "l_elbow",
            LWrist => "l_wrist",
            RShoulder => "r_shoulder",
            RElbow => "r_elbow",
            RWrist => "r_wrist",
            LHip => "l_hip",
            LKnee => "l_knee",
            LAnkle => "l_ankle",
            LFootTip => "l_foot_tip",
            RHip => "r_hip",
            RKnee => "r_knee",
            RAnkle => "r_ankle",
            RFootTip => "r_foot_tip",
        }
    }

    /// Foot tips have no 2D detections; they are only reachable through the
    /// ankle's 3D encoding.
    pub fn has_2d(self) -> bool {
        !matches!(self, Joint::LFootTip | Joint::RFootTip)
    }

    pub fn children(self) -> impl Iterator<Item = Joint> {
        Self::ALL
            .into_iter()
            .filter(move |c| c.parent() == Some(self))
    }

    /// Relative weight of this joint in the 2D reprojection term.
    pub fn reprojection_weight(self) -> f64 {
        use Joint::*;
        match self {
            LKnee | RKnee | LAnkle | RAnkle | LFootTip | RFootTip => 1.7,
            LElbow | RElbow => 1.5,
            LWrist | RWrist => 2.0,
            _ => 1.0,
        }
    }
}

/// Joints that produce 2D detections (heatmaps and PAFs).
pub fn joints_2d() -> impl Iterator<Item = Joint> {
    Joint::ALL.into_iter().filter(|j| j.has_2d())
}

/// `true` when `ancestor` lies on the path from the root to `joint`
/// (inclusive of `joint` itself).
pub fn is_in_subtree(ancestor: Joint, joint: Joint) -> bool {
    let mut cur = Some(joint);
    while let Some(j) = cur {
        if j == ancestor {
            return true;
        }
        cur = j.parent();
    }
    false
}

/// Tree description shared with the simulator and the JSON export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSet {
    pub joints: Vec<String>,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
}

impl JointSet {
    pub fn standard() -> Self {
        let joints = Joint::ALL.iter().map(|j| j.name().to_string()).collect();
        let parent: Vec<Option<usize>> = Joint::ALL
            .iter()
            .map(|j| j.parent().map(Joint::index))
            .collect();
        Self::from_parents(joints, parent)
    }

    pub fn from_parents(joints: Vec<String>, parent: Vec<Option<usize>>) -> Self {
        let mut children = vec![Vec::new(); joints.len()];
        for (j, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(j);
            }
        }
        Self {
            joints,
            parent,
            children,
        }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        self.parent.iter().position(Option::is_none)
    }

    /// Exactly one root and every joint reaches it without cycles.
    pub fn is_rooted_tree(&self) -> bool {
        if self.parent.iter().filter(|p| p.is_none()).count() != 1 {
            return false;
        }
        (0..self.len()).all(|start| {
            let mut cur = start;
            for _ in 0..=self.len() {
                match self.parent[cur] {
                    None => return true,
                    Some(p) if p < self.len() => cur = p,
                    Some(_) => return false,
                }
            }
            false
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }

    fn rotation(self, angle: f64) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Unit::new_unchecked(self.unit()), angle).into_inner()
    }
}

/// Rotational DOF owned by each joint, in Euler application order. The root
/// rotation occupies θ[3..6]; local blocks follow in this table's order.
const JOINT_AXES: [(Joint, &[Axis]); 13] = [
    (Joint::Pelvis, &[Axis::Z, Axis::X, Axis::Y]),
    (Joint::Spine, &[Axis::Z, Axis::X]),
    (Joint::Neck, &[Axis::Z, Axis::X, Axis::Y]),
    (Joint::LShoulder, &[Axis::Z, Axis::X, Axis::Y]),
    (Joint::LElbow, &[Axis::Y]),
    (Joint::RShoulder, &[Axis::Z, Axis::X, Axis::Y]),
    (Joint::RElbow, &[Axis::Y]),
    (Joint::LHip, &[Axis::Z, Axis::X, Axis::Y]),
    (Joint::LKnee, &[Axis::X]),
    (Joint::LAnkle, &[Axis::X]),
    (Joint::RHip, &[Axis::Z, Axis::X, Axis::Y]),
    (Joint::RKnee, &[Axis::X]),
    (Joint::RAnkle, &[Axis::X]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DofKind {
    Translation(Axis),
    Rotation { joint: Joint, axis: Axis },
}

/// The fixed meaning of every θ index.
#[derive(Clone, Debug)]
pub struct DofLayout {
    pub dofs: [DofKind; NUM_DOF],
    /// For every joint, the θ index range of its rotation block (empty when
    /// the joint has no rotational DOF).
    pub blocks: [std::ops::Range<usize>; NUM_JOINTS],
}

impl DofLayout {
    pub fn get() -> &'static DofLayout {
        static LAYOUT: std::sync::OnceLock<DofLayout> = std::sync::OnceLock::new();
        LAYOUT.get_or_init(|| {
            let mut dofs = [DofKind::Translation(Axis::X); NUM_DOF];
            dofs[1] = DofKind::Translation(Axis::Y);
            dofs[2] = DofKind::Translation(Axis::Z);
            let mut blocks: [std::ops::Range<usize>; NUM_JOINTS] = Default::default();
            let mut next = 3;
            for (joint, axes) in JOINT_AXES {
                blocks[joint.index()] = next..next + axes.len();
                for &axis in axes {
                    dofs[next] = DofKind::Rotation { joint, axis };
                    next += 1;
                }
            }
            debug_assert_eq!(next, NUM_DOF);
            DofLayout { dofs, blocks }
        })
    }

    pub fn axes(joint: Joint) -> &'static [Axis] {
        JOINT_AXES
            .iter()
            .find(|(j, _)| *j == joint)
            .map(|(_, a)| *a)
            .unwrap_or(&[])
    }
}

/// θ: root translation (meters), root rotation and local joint angles (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams(#[serde(with = "dof_array")] pub [f64; NUM_DOF]);

mod dof_array {
    use super::NUM_DOF;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; NUM_DOF], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; NUM_DOF], D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"29 values"))
    }
}

impl Default for PoseParams {
    fn default() -> Self {
        Self([0.0; NUM_DOF])
    }
}

impl PoseParams {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_DOF] = values
            .try_into()
            .map_err(|_| Error::WidthMismatch {
                expected: NUM_DOF,
                got: values.len(),
            })?;
        Ok(Self(arr))
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn set_translation(&mut self, t: Vector3<f64>) {
        self.0[..3].copy_from_slice(t.as_slice());
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Local rotation of `joint` from its Euler block; identity for joints
    /// without DOF.
    pub fn local_rotation(&self, joint: Joint) -> Matrix3<f64> {
        let layout = DofLayout::get();
        let range = layout.blocks[joint.index()].clone();
        let axes = DofLayout::axes(joint);
        let mut r = Matrix3::identity();
        for (axis, idx) in axes.iter().zip(range) {
            r *= axis.rotation(self.0[idx]);
        }
        r
    }
}

/// Rest-pose (T-pose) bone offsets in meters for a 1.63 m reference body,
/// expressed in the parent's frame. Directions are fixed; lengths are scaled
/// per subject.
pub const REST_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],    // pelvis
    [0.0, 0.22, 0.0],   // spine
    [0.0, 0.28, 0.0],   // neck
    [0.0, 0.20, 0.0],   // head
    [0.18, -0.03, 0.0], // l_shoulder
    [0.28, 0.0, 0.0],   // l_elbow
    [0.26, 0.0, 0.0],   // l_wrist
    [-0.18, -0.03, 0.0],
    [-0.28, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.10, -0.06, 0.0], // l_hip
    [0.0, -0.44, 0.0],  // l_knee
    [0.0, -0.43, 0.0],  // l_ankle
    [0.0, 0.0, 0.15],   // l_foot_tip
    [-0.10, -0.06, 0.0],
    [0.0, -0.44, 0.0],
    [0.0, -0.43, 0.0],
    [0.0, 0.0, 0.15],
];

pub fn rest_direction(joint: Joint) -> Vector3<f64> {
    let o = REST_OFFSETS[joint.index()];
    let v = Vector3::new(o[0], o[1], o[2]);
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Length of the bone ending at each non-root joint. The root entry is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneLengths(pub [f64; NUM_JOINTS]);

impl BoneLengths {
    pub fn new(lengths: [f64; NUM_JOINTS]) -> Result<Self> {
        for j in Joint::ALL.iter().skip(1) {
            let l = lengths[j.index()];
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "bone length of {} must be positive, got {l}",
                    j.name()
                )));
            }
        }
        let mut lengths = lengths;
        lengths[0] = 0.0;
        Ok(Self(lengths))
    }

    /// Reference proportions, normalized to unit height.
    pub fn reference() -> Self {
        let mut l = [0.0; NUM_JOINTS];
        for j in Joint::ALL {
            let o = REST_OFFSETS[j.index()];
            l[j.index()] = Vector3::new(o[0], o[1], o[2]).norm();
        }
        Self(l).normalized().0
    }

    pub fn get(&self, joint: Joint) -> f64 {
        self.0[joint.index()]
    }

    /// Vertical extent of the rest pose from the mean ankle height to the head.
    pub fn rest_height(&self) -> f64 {
        let mut y = [0.0; NUM_JOINTS];
        for j in Joint::ALL.into_iter().skip(1) {
            let p = j.parent().expect("non-root").index();
            y[j.index()] = y[p] + rest_direction(j).y * self.0[j.index()];
        }
        y[Joint::Head.index()] - 0.5 * (y[Joint::LAnkle.index()] + y[Joint::RAnkle.index()])
    }

    /// Returns the unit-height lengths and the scale that was divided out.
    pub fn normalized(&self) -> (Self, f64) {
        let h = self.rest_height();
        let mut l = self.0;
        l.iter_mut().for_each(|v| *v /= h);
        (Self(l), h)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut l = self.0;
        l.iter_mut().for_each(|v| *v *= s);
        Self(l)
    }
}

/// Per-joint 3D positions (root-relative unless stated otherwise).
pub type Pose3D = [Vector3<f64>; NUM_JOINTS];

/// Per-joint pixel coordinates with visibility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub points: [Vector2<f64>; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
}

impl Default for Pose2D {
    fn default() -> Self {
        Self {
            points: [Vector2::zeros(); NUM_JOINTS],
            visible: [false; NUM_JOINTS],
        }
    }
}

impl Pose2D {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

/// Joint positions together with the world rotation of every joint frame.
#[derive(Clone, Debug)]
pub struct PoseFrames {
    pub positions: Pose3D,
    pub rotations: [Matrix3<f64>; NUM_JOINTS],
}

/// Root-relative joint positions and frames for a unit-scale skeleton.
pub fn pose_frames(theta: &PoseParams, bones: &BoneLengths) -> PoseFrames {
    let mut positions = [Vector3::zeros(); NUM_JOINTS];
    let mut rotations = [Matrix3::identity(); NUM_JOINTS];
    for j in Joint::ALL {
        let local = theta.local_rotation(j);
        match j.parent() {
            None => rotations[j.index()] = local,
            Some(p) => {
                let gp = rotations[p.index()];
                positions[j.index()] =
                    positions[p.index()] + gp * (rest_direction(j) * bones.get(j));
                rotations[j.index()] = gp * local;
            }
        }
    }
    PoseFrames {
        positions,
        rotations,
    }
}

/// Root-relative joint positions.
pub fn forward_kinematics(theta: &PoseParams, bones: &BoneLengths) -> Pose3D {
    pose_frames(theta, bones).positions
}

/// Metric world positions: `translation + height * root_relative`.
pub fn global_positions(theta: &PoseParams, bones: &BoneLengths, height: f64) -> Pose3D {
    let t = theta.translation();
    forward_kinematics(theta, bones).map(|p| t + p * height)
}

/// World-space rotation axes of every rotational DOF at the current pose,
/// paired with the joint whose rotation they belong to.
fn dof_axes(theta: &PoseParams, frames: &PoseFrames) -> Vec<(usize, Joint, Vector3<f64>)> {
    let layout = DofLayout::get();
    let mut out = Vec::with_capacity(NUM_DOF - 3);
    for (joint, axes) in JOINT_AXES {
        let parent_rot = joint
            .parent()
            .map(|p| frames.rotations[p.index()])
            .unwrap_or_else(Matrix3::identity);
        let mut acc = parent_rot;
        for (axis, idx) in axes.iter().zip(layout.blocks[joint.index()].clone()) {
            out.push((idx, joint, acc * axis.unit()));
            acc *= axis.rotation(theta.0[idx]);
        }
    }
    out
}

/// Analytic Jacobian of unit-scale global joint positions (`translation +
/// root_relative`). Translation columns are identity blocks; dropping them
/// gives the Jacobian of the root-relative positions.
pub fn fk_jacobian(theta: &PoseParams, bones: &BoneLengths) -> FkJacobian {
    let frames = pose_frames(theta, bones);
    fk_jacobian_from_frames(theta, &frames)
}

pub fn fk_jacobian_from_frames(theta: &PoseParams, frames: &PoseFrames) -> FkJacobian {
    let mut jac = FkJacobian::zeros();
    for j in 0..NUM_JOINTS {
        for a in 0..3 {
            jac[(3 * j + a, a)] = 1.0;
        }
    }
    for (idx, owner, axis) in dof_axes(theta, frames) {
        let pivot = frames.positions[owner.index()];
        for c in Joint::ALL {
            if c != owner && is_in_subtree(owner, c) {
                let d = axis.cross(&(frames.positions[c.index()] - pivot));
                for a in 0..3 {
                    jac[(3 * c.index() + a, idx)] = d[a];
                }
            }
        }
    }
    jac
}

/// Ground plane `normal · x + offset = 0` in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl GroundPlane {
    /// The `y = 0` plane with `+y` up.
    pub fn horizontal() -> Self {
        Self {
            normal: Vector3::y(),
            offset: 0.0,
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Pinhole camera with world→camera extrinsics (camera axes: x right,
/// y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub ground: GroundPlane,
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        ground: GroundPlane,
    ) -> Result<Self> {
        let k = &intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidCamera("intrinsics must be upper-triangular".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if (k[(2, 2)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidCamera("intrinsics[2][2] must be 1".into()));
        }
        if (ground.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera("ground normal must be unit length".into()));
        }
        let orth = rotation.transpose() * rotation - Matrix3::identity();
        if orth.abs().max() > 1e-9 || rotation.determinant() < 0.0 {
            return Err(Error::InvalidCamera("rotation must be a proper rotation".into()));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            ground,
        })
    }

    /// Camera at `eye` looking at `target`, `up` giving the world up direction.
    pub fn look_at(
        focal: f64,
        principal: Vector2<f64>,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        ground: GroundPlane,
    ) -> Result<Self> {
        let f = (target - eye).normalize();
        let down = -(up - f * up.dot(&f));
        if down.norm() < 1e-9 {
            return Err(Error::InvalidCamera("up vector parallel to viewing direction".into()));
        }
        let d = down.normalize();
        let r = d.cross(&f);
        let rotation = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
        let translation = -(rotation * eye);
        let intrinsics = Matrix3::new(
            focal,
            0.0,
            principal.x,
            0.0,
            focal,
            principal.y,
            0.0,
            0.0,
            1.0,
        );
        Self::new(intrinsics, rotation, translation, ground)
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.intrinsics[(0, 0)], self.intrinsics[(1, 1)])
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.intrinsics[(0, 2)], self.intrinsics[(1, 2)])
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<Projection> {
        let pc = self.to_camera(point);
        if pc.z <= 0.0 || !pc.z.is_finite() {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        let h = self.intrinsics * pc;
        Ok(Projection {
            pixel: Vector2::new(h.x / h.z, h.y / h.z),
            depth: pc.z,
        })
    }

    pub fn project_all(&self, points: &[Vector3<f64>]) -> Result<Vec<Projection>> {
        points.iter().map(|p| self.project(p)).collect()
    }

    /// ∂pixel/∂world at `point`.
    pub fn projection_jacobian(&self, point: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
        let pc = self.to_camera(point);
        if pc.z <= 0.0 {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        let k = &self.intrinsics;
        let (x, y, z) = (pc.x, pc.y, pc.z);
        // pixel = (k00 x/z + k01 y/z + k02, k11 y/z + k12)
        let dpix_dpc = Matrix2x3::new(
            k[(0, 0)] / z,
            k[(0, 1)] / z,
            -(k[(0, 0)] * x + k[(0, 1)] * y) / (z * z),
            0.0,
            k[(1, 1)] / z,
            -k[(1, 1)] * y / (z * z),
        );
        Ok(dpix_dpc * self.rotation)
    }

    /// Unit world-space direction of the viewing ray through `pixel`.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let kinv = self
            .intrinsics
            .try_inverse()
            .expect("validated intrinsics are invertible");
        let dc = kinv * Vector3::new(pixel.x, pixel.y, 1.0);
        (self.rotation.transpose() * dc).normalize()
    }
}

/// Serializable skeleton definition shared by tests, the simulator and tools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonDef {
    pub schema_version: u32,
    pub joints: Vec<JointDef>,
    pub dof_layout: Vec<DofDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointDef {
    pub name: String,
    pub parent: Option<String>,
    pub rest_offset: [f64; 3],
    pub has_2d: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DofDef {
    pub index: usize,
    pub kind: DofKind,
}

impl SkeletonDef {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn standard() -> Self {
        let joints = Joint::ALL
            .iter()
            .map(|j| JointDef {
                name: j.name().to_string(),
                parent: j.parent().map(|p| p.name().to_string()),
                rest_offset: REST_OFFSETS[j.index()],
                has_2d: j.has_2d(),
            })
            .collect();
        let dof_layout = DofLayout::get()
            .dofs
            .iter()
            .enumerate()
            .map(|(index, kind)| DofDef { index, kind: *kind })
            .collect();
        Self {
            schema_version: Self::SCHEMA_VERSION,
            joints,
            dof_layout,
        }
    }

    pub fn joint_set(&self) -> JointSet {
        let names: Vec<String> = self.joints.iter().map(|j| j.name.clone()).collect();
        let parent = self
            .joints
            .iter()
            .map(|j| {
                j.parent
                    .as_ref()
                    .and_then(|p| names.iter().position(|n| n == p))
            })
            .collect();
        JointSet::from_parents(names, parent)
    }
}
