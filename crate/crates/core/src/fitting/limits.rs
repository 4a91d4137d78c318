use serde::{Deserialize, Serialize};

use crate::skeleton::{Axis, DofLayout, Joint, GLOBAL_DOF, NUM_DOF, NUM_LOCAL_DOF};

/// Lower and upper bounds per local DOF (θ indices 6..29), radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub min: [f64; NUM_LOCAL_DOF],
    pub max: [f64; NUM_LOCAL_DOF],
}

/// (joint, axis, min, max). Left and right limbs mirror across the sagittal
/// plane, which flips the sign of rotations about z and y.
const TABLE: [(Joint, Axis, f64, f64); NUM_LOCAL_DOF] = [
    (Joint::Spine, Axis::Z, -0.4, 0.4),
    (Joint::Spine, Axis::X, -0.4, 0.9),
    (Joint::Neck, Axis::Z, -0.5, 0.5),
    (Joint::Neck, Axis::X, -0.6, 0.8),
    (Joint::Neck, Axis::Y, -1.2, 1.2),
    (Joint::LShoulder, Axis::Z, -1.6, 1.4),
    (Joint::LShoulder, Axis::X, -1.2, 1.2),
    (Joint::LShoulder, Axis::Y, -1.6, 0.6),
    (Joint::LElbow, Axis::Y, -2.5, 0.05),
    (Joint::RShoulder, Axis::Z, -1.4, 1.6),
    (Joint::RShoulder, Axis::X, -1.2, 1.2),
    (Joint::RShoulder, Axis::Y, -0.6, 1.6),
    (Joint::RElbow, Axis::Y, -0.05, 2.5),
    (Joint::LHip, Axis::Z, -0.4, 0.9),
    (Joint::LHip, Axis::X, -2.0, 0.5),
    (Joint::LHip, Axis::Y, -0.7, 0.7),
    (Joint::LKnee, Axis::X, -0.05, 2.4),
    (Joint::LAnkle, Axis::X, -0.7, 0.5),
    (Joint::RHip, Axis::Z, -0.9, 0.4),
    (Joint::RHip, Axis::X, -2.0, 0.5),
    (Joint::RHip, Axis::Y, -0.7, 0.7),
    (Joint::RKnee, Axis::X, -0.05, 2.4),
    (Joint::RAnkle, Axis::X, -0.7, 0.5),
];

impl JointLimits {
    pub fn anatomical() -> Self {
        let layout = DofLayout::get();
        let mut min = [0.0; NUM_LOCAL_DOF];
        let mut max = [0.0; NUM_LOCAL_DOF];
        for (joint, axis, lo, hi) in TABLE {
            let k = DofLayout::axes(joint)
                .iter()
                .position(|a| *a == axis)
                .expect("limit table matches the DOF layout");
            let d = layout.blocks[joint.index()].start + k - GLOBAL_DOF;
            min[d] = lo;
            max[d] = hi;
        }
        Self { min, max }
    }

    /// Unbounded limits; the hinge is never active.
    pub fn unbounded() -> Self {
        Self {
            min: [f64::NEG_INFINITY; NUM_LOCAL_DOF],
            max: [f64::INFINITY; NUM_LOCAL_DOF],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.min.iter().zip(&self.max).all(|(lo, hi)| lo < hi)
    }

    /// Largest violation over local DOF (0 inside the box).
    pub fn max_violation(&self, theta: &[f64; NUM_DOF]) -> f64 {
        (GLOBAL_DOF..NUM_DOF)
            .map(|d| {
                let i = d - GLOBAL_DOF;
                (self.min[i] - theta[d]).max(theta[d] - self.max[i]).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn clamp(&self, theta: &mut [f64; NUM_DOF]) {
        for d in GLOBAL_DOF..NUM_DOF {
            theta[d] = theta[d].clamp(self.min[d - GLOBAL_DOF], self.max[d - GLOBAL_DOF]);
        }
    }
}
