//! Per-person fitting energy and its closed-form gradient.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::limits::JointLimits;
use crate::error::Result;
use crate::skeleton::{
    fk_jacobian_from_frames, pose_frames, BoneLengths, CameraModel, FkJacobian, Joint, Pose3D,
    PoseParams, GLOBAL_DOF, NUM_DOF, NUM_JOINTS,
};

/// θ index of the root translation along world z.
pub const DEPTH_DOF: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyWeights {
    pub w3d: f64,
    pub w2d: f64,
    pub wlim: f64,
    pub wtemp: f64,
    pub wdepth: f64,
    /// Relative 2D weight per joint.
    pub joint_2d: [f64; NUM_JOINTS],
}

impl Default for EnergyWeights {
    fn default() -> Self {
        let mut joint_2d = [0.0; NUM_JOINTS];
        for j in Joint::ALL {
            joint_2d[j.index()] = j.reprojection_weight();
        }
        Self {
            w3d: 0.9,
            w2d: 1e-5,
            wlim: 0.5,
            wtemp: 1e-7,
            wdepth: 8e-6,
            joint_2d,
        }
    }
}

impl EnergyWeights {
    pub fn is_valid(&self) -> bool {
        [self.w3d, self.w2d, self.wlim, self.wtemp, self.wdepth]
            .iter()
            .chain(self.joint_2d.iter())
            .all(|w| *w >= 0.0 && w.is_finite())
    }

    /// Only the terms listed are kept; the rest are zeroed.
    pub fn only(&self, terms: Terms) -> Self {
        Self {
            w3d: if terms.e3d { self.w3d } else { 0.0 },
            w2d: if terms.e2d { self.w2d } else { 0.0 },
            wlim: if terms.lim { self.wlim } else { 0.0 },
            wtemp: if terms.temp { self.wtemp } else { 0.0 },
            wdepth: if terms.depth { self.wdepth } else { 0.0 },
            joint_2d: self.joint_2d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub e3d: bool,
    pub e2d: bool,
    pub lim: bool,
    pub temp: bool,
    pub depth: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        e3d: true,
        e2d: true,
        lim: true,
        temp: true,
        depth: true,
    };
}

/// Per-frame measurements for one person.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// Root-relative pose in world orientation, unit skeleton height.
    pub p3d: Pose3D,
    /// Pixel positions; entries with zero confidence are ignored.
    pub p2d: [Vector2<f64>; NUM_JOINTS],
    pub confidence: [f64; NUM_JOINTS],
}

/// Everything the energy needs besides θ and the measurements.
#[derive(Clone, Copy, Debug)]
pub struct Model<'a> {
    /// Unit-height bone lengths.
    pub bones: &'a BoneLengths,
    /// Absolute height, meters.
    pub height: f64,
    pub camera: &'a CameraModel,
    pub weights: &'a EnergyWeights,
    pub limits: &'a JointLimits,
    /// θ[t−1] and θ[t−2] when available.
    pub prev: Option<&'a PoseParams>,
    pub prev2: Option<&'a PoseParams>,
}

/// Unweighted terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Breakdown {
    pub e3d: f64,
    pub e2d: f64,
    pub lim: f64,
    pub temp: f64,
    pub depth: f64,
    pub total: f64,
}

impl Breakdown {
    pub fn weighted_sum(&self, w: &EnergyWeights) -> f64 {
        w.w3d * self.e3d + w.w2d * self.e2d + w.wlim * self.lim + w.wtemp * self.temp + w.wdepth * self.depth
    }
}

pub fn limit_energy(theta: &PoseParams, limits: &JointLimits) -> f64 {
    (GLOBAL_DOF..NUM_DOF)
        .map(|d| {
            let (lo, hi) = (limits.min[d - GLOBAL_DOF], limits.max[d - GLOBAL_DOF]);
            let v = theta.0[d];
            if v < lo {
                (lo - v).powi(2)
            } else if v > hi {
                (v - hi).powi(2)
            } else {
                0.0
            }
        })
        .sum()
}

fn temporal_accel(theta: &PoseParams, m: &Model) -> Option<[f64; NUM_DOF]> {
    let (p1, p2) = (m.prev?, m.prev2?);
    let mut a = [0.0; NUM_DOF];
    for (d, v) in a.iter_mut().enumerate() {
        *v = theta.0[d] - 2.0 * p1.0[d] + p2.0[d];
    }
    Some(a)
}

/// Evaluates every term. Joints projecting behind the camera make the 2D
/// term fail.
pub fn energy(theta: &PoseParams, targets: &Targets, m: &Model) -> Result<Breakdown> {
    let frames = pose_frames(theta, m.bones);
    let p = &frames.positions;
    let w = m.weights;
    let mut b = Breakdown::default();
    if w.w3d > 0.0 {
        b.e3d = (0..NUM_JOINTS).map(|j| (p[j] - targets.p3d[j]).norm_squared()).sum();
    }
    if w.w2d > 0.0 {
        let t = theta.translation();
        for j in 0..NUM_JOINTS {
            let c = targets.confidence[j];
            if c <= 0.0 || w.joint_2d[j] == 0.0 {
                continue;
            }
            let px = m.camera.project(&(t + p[j] * m.height))?.pixel;
            b.e2d += w.joint_2d[j] * c * (px - targets.p2d[j]).norm_squared();
        }
    }
    b.lim = limit_energy(theta, m.limits);
    if let Some(a) = temporal_accel(theta, m) {
        b.temp = a.iter().map(|v| v * v).sum();
    }
    if let Some(p1) = m.prev {
        b.depth = (theta.0[DEPTH_DOF] - p1.0[DEPTH_DOF]).abs();
    }
    b.total = b.weighted_sum(w);
    Ok(b)
}

/// Energy, gradient and a Gauss-Newton estimate of the Hessian diagonal.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub breakdown: Breakdown,
    pub gradient: [f64; NUM_DOF],
    pub curvature: [f64; NUM_DOF],
}

pub fn energy_gradient(theta: &PoseParams, targets: &Targets, m: &Model) -> Result<[f64; NUM_DOF]> {
    Ok(evaluate(theta, targets, m)?.gradient)
}

pub fn evaluate(theta: &PoseParams, targets: &Targets, m: &Model) -> Result<Evaluation> {
    let frames = pose_frames(theta, m.bones);
    let jac: FkJacobian = fk_jacobian_from_frames(theta, &frames);
    let p = &frames.positions;
    let w = m.weights;
    let mut g = [0.0; NUM_DOF];
    let mut h = [0.0; NUM_DOF];
    let mut b = Breakdown::default();

    if w.w3d > 0.0 {
        for j in 0..NUM_JOINTS {
            let r = p[j] - targets.p3d[j];
            b.e3d += r.norm_squared();
            // translation columns do not move root-relative positions
            for d in 3..NUM_DOF {
                let col = Vector3::new(jac[(3 * j, d)], jac[(3 * j + 1, d)], jac[(3 * j + 2, d)]);
                g[d] += 2.0 * w.w3d * r.dot(&col);
                h[d] += 2.0 * w.w3d * col.norm_squared();
            }
        }
    }

    if w.w2d > 0.0 {
        let t = theta.translation();
        for j in 0..NUM_JOINTS {
            let c = targets.confidence[j];
            let wj = w.joint_2d[j];
            if c <= 0.0 || wj == 0.0 {
                continue;
            }
            let x = t + p[j] * m.height;
            let px = m.camera.project(&x)?.pixel;
            let jp: Matrix2x3<f64> = m.camera.projection_jacobian(&x)?;
            let r = px - targets.p2d[j];
            b.e2d += wj * c * r.norm_squared();
            let k = w.w2d * wj * c;
            for d in 0..NUM_DOF {
                let scale = if d < 3 { 1.0 } else { m.height };
                let col = Vector3::new(jac[(3 * j, d)], jac[(3 * j + 1, d)], jac[(3 * j + 2, d)]) * scale;
                let dp = jp * col;
                g[d] += 2.0 * k * r.dot(&dp);
                h[d] += 2.0 * k * dp.norm_squared();
            }
        }
    }

    for d in GLOBAL_DOF..NUM_DOF {
        let (lo, hi) = (m.limits.min[d - GLOBAL_DOF], m.limits.max[d - GLOBAL_DOF]);
        let v = theta.0[d];
        if v < lo {
            b.lim += (lo - v).powi(2);
            g[d] += 2.0 * w.wlim * (v - lo);
            h[d] += 2.0 * w.wlim;
        } else if v > hi {
            b.lim += (v - hi).powi(2);
            g[d] += 2.0 * w.wlim * (v - hi);
            h[d] += 2.0 * w.wlim;
        }
    }

    if let Some(a) = temporal_accel(theta, m) {
        for d in 0..NUM_DOF {
            b.temp += a[d] * a[d];
            g[d] += 2.0 * w.wtemp * a[d];
            h[d] += 2.0 * w.wtemp;
        }
    }

    if let Some(p1) = m.prev {
        let dz = theta.0[DEPTH_DOF] - p1.0[DEPTH_DOF];
        b.depth = dz.abs();
        // subgradient 0 at dz = 0
        g[DEPTH_DOF] += w.wdepth * if dz > 0.0 { 1.0 } else if dz < 0.0 { -1.0 } else { 0.0 };
    }

    b.total = b.weighted_sum(w);
    Ok(Evaluation {
        breakdown: b,
        gradient: g,
        curvature: h,
    })
}

/// Gradient of `w3D·E3D + wlim·Elim`, watched for tracking failures.
pub fn recovery_gradient_norm(theta: &PoseParams, targets: &Targets, m: &Model) -> Result<f64> {
    let w = m.weights.only(Terms {
        e3d: true,
        e2d: false,
        lim: true,
        temp: false,
        depth: false,
    });
    let mm = Model { weights: &w, ..*m };
    let g = energy_gradient(theta, targets, &mm)?;
    Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{forward_kinematics, GroundPlane};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraModel {
        CameraModel::look_at(
            500.0,
            Vector2::new(256.0, 160.0),
            Vector3::new(0.0, 1.6, 0.0),
            Vector3::new(0.0, 1.0, 6.0),
            Vector3::y(),
            GroundPlane::horizontal(),
        )
        .unwrap()
    }

    fn random_theta(rng: &mut ChaCha8Rng, spread: f64) -> PoseParams {
        let mut t = [0.0; NUM_DOF];
        t[0] = rng.random_range(-1.0..1.0);
        t[1] = rng.random_range(0.8..1.2);
        t[2] = rng.random_range(5.0..7.0);
        for v in t.iter_mut().skip(3) {
            *v = rng.random_range(-spread..spread);
        }
        t[5] += std::f64::consts::PI;
        PoseParams(t)
    }

    fn perturbed_targets(rng: &mut ChaCha8Rng, theta: &PoseParams, bones: &BoneLengths, cam: &CameraModel) -> Targets {
        let p = forward_kinematics(theta, bones);
        let g = crate::skeleton::global_positions(theta, bones, 1.7);
        let mut p2d = [Vector2::zeros(); NUM_JOINTS];
        let mut conf = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            p2d[j] = cam.project(&g[j]).unwrap().pixel + Vector2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            conf[j] = if Joint::from_index(j).unwrap().has_2d() { rng.random_range(0.3..1.0) } else { 0.0 };
        }
        Targets {
            p3d: p.map(|v| v + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05))),
            p2d,
            confidence: conf,
        }
    }

    #[test]
    fn exact_fit_leaves_only_2d() {
        let bones = BoneLengths::reference();
        let cam = camera();
        let theta = PoseParams({
            let mut t = [0.0; NUM_DOF];
            t[1] = 1.0;
            t[2] = 6.0;
            t[5] = std::f64::consts::PI;
            t
        });
        let p3d = forward_kinematics(&theta, &bones);
        let targets = Targets {
            p3d,
            p2d: [Vector2::new(100.0, 100.0); NUM_JOINTS],
            confidence: [1.0; NUM_JOINTS],
        };
        let (w, l) = (EnergyWeights::default(), JointLimits::anatomical());
        let m = Model {
            bones: &bones,
            height: 1.7,
            camera: &cam,
            weights: &w,
            limits: &l,
            prev: Some(&theta),
            prev2: Some(&theta),
        };
        let b = energy(&theta, &targets, &m).unwrap();
        assert_eq!(b.e3d, 0.0);
        assert_eq!(b.lim, 0.0);
        assert_eq!(b.temp, 0.0);
        assert_eq!(b.depth, 0.0);
        assert!(b.e2d > 0.0);
        assert!((b.total - w.w2d * b.e2d).abs() < 1e-15);
    }

    #[test]
    fn hinge_value_below_min() {
        let l = JointLimits::anatomical();
        let mut t = [0.0; NUM_DOF];
        t[GLOBAL_DOF + 3] = l.min[3] - 0.1;
        assert!((limit_energy(&PoseParams(t), &l) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bones = BoneLengths::reference();
        let cam = camera();
        let (w, l) = (EnergyWeights::default(), JointLimits::anatomical());
        for _ in 0..50 {
            let th = random_theta(&mut rng, 1.5);
            let p1 = random_theta(&mut rng, 1.5);
            let p2 = random_theta(&mut rng, 1.5);
            let targets = perturbed_targets(&mut rng, &th, &bones, &cam);
            let m = Model { bones: &bones, height: 1.7, camera: &cam, weights: &w, limits: &l, prev: Some(&p1), prev2: Some(&p2) };
            let b = energy(&th, &targets, &m).unwrap();
            assert!((b.weighted_sum(&w) - b.total).abs() <= 1e-12 * b.total.max(1.0));
            let e = evaluate(&th, &targets, &m).unwrap().breakdown;
            assert!((e.total - b.total).abs() <= 1e-12 * b.total.max(1.0));
        }
    }

    #[test]
    fn missing_history_zeroes_temporal_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bones = BoneLengths::reference();
        let cam = camera();
        let (w, l) = (EnergyWeights::default(), JointLimits::anatomical());
        let th = random_theta(&mut rng, 0.5);
        let targets = perturbed_targets(&mut rng, &th, &bones, &cam);
        let m = Model { bones: &bones, height: 1.7, camera: &cam, weights: &w, limits: &l, prev: None, prev2: None };
        let b = energy(&th, &targets, &m).unwrap();
        assert_eq!((b.temp, b.depth), (0.0, 0.0));
    }

    #[test]
    fn exact_3d_fit_has_zero_3d_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bones = BoneLengths::reference();
        let cam = camera();
        let l = JointLimits::unbounded();
        let w = EnergyWeights::default().only(Terms { e3d: true, e2d: false, lim: false, temp: false, depth: false });
        for _ in 0..20 {
            let th = random_theta(&mut rng, 1.0);
            let targets = Targets { p3d: forward_kinematics(&th, &bones), p2d: [Vector2::zeros(); NUM_JOINTS], confidence: [0.0; NUM_JOINTS] };
            let m = Model { bones: &bones, height: 1.7, camera: &cam, weights: &w, limits: &l, prev: None, prev2: None };
            let g = energy_gradient(&th, &targets, &m).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-14));
        }
    }

    /// Central differences over random configurations, many of them with
    /// active limits.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bones = BoneLengths::reference();
        let cam = camera();
        let (w, l) = (EnergyWeights::default(), JointLimits::anatomical());
        for draw in 0..100 {
            let th = random_theta(&mut rng, 1.5);
            let mut p1 = th;
            let mut p2 = th;
            for d in 0..NUM_DOF {
                p1.0[d] += rng.random_range(-0.1..0.1);
                p2.0[d] += rng.random_range(-0.1..0.1);
            }
            let targets = perturbed_targets(&mut rng, &th, &bones, &cam);
            let m = Model { bones: &bones, height: 1.7, camera: &cam, weights: &w, limits: &l, prev: Some(&p1), prev2: Some(&p2) };
            let g = energy_gradient(&th, &targets, &m).unwrap();
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for d in 0..NUM_DOF {
                let (mut a, mut b) = (th, th);
                a.0[d] += h;
                b.0[d] -= h;
                let fd = (energy(&a, &targets, &m).unwrap().total - energy(&b, &targets, &m).unwrap().total) / (2.0 * h);
                num += (fd - g[d]).powi(2);
                den += fd * fd;
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-5, "draw {draw}: rel err {rel}");
        }
    }

    #[test]
    fn hinge_gradient_is_continuous_at_the_bound() {
        let l = JointLimits::anatomical();
        let bones = BoneLengths::reference();
        let cam = camera();
        let w = EnergyWeights::default().only(Terms { e3d: false, e2d: false, lim: true, temp: false, depth: false });
        let targets = Targets { p3d: [Vector3::zeros(); NUM_JOINTS], p2d: [Vector2::zeros(); NUM_JOINTS], confidence: [0.0; NUM_JOINTS] };
        let m = Model { bones: &bones, height: 1.7, camera: &cam, weights: &w, limits: &l, prev: None, prev2: None };
        let d = GLOBAL_DOF + 5;
        for bound in [l.min[5], l.max[5]] {
            for eps in [1e-9, -1e-9] {
                let mut t = [0.0; NUM_DOF];
                t[d] = bound + eps;
                let g = energy_gradient(&PoseParams(t), &targets, &m).unwrap();
                assert!(g[d].abs() < 1e-8);
            }
        }
    }
}
