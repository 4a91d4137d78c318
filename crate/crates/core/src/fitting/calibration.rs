use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{BoneLengths, CameraModel, Joint, Pose3D, NUM_JOINTS};

/// Frames of 3D predictions averaged for bone lengths.
pub const BONE_FRAMES: usize = 10;

/// Intersection of the viewing ray through `pixel` with the ground plane.
pub fn ground_point(pixel: &Vector2<f64>, cam: &CameraModel) -> Result<Vector3<f64>> {
    let c = cam.center();
    let d = cam.ray_direction(pixel);
    let n = cam.ground.normal;
    let denom = n.dot(&d);
    if denom.abs() < 1e-9 {
        return Err(Error::ParallelRay);
    }
    let lambda = -cam.ground.signed_distance(&c) / denom;
    if lambda <= 0.0 {
        return Err(Error::ParallelRay);
    }
    Ok(c + d * lambda)
}

/// Head height above the ground for a subject whose feet touch the ground.
/// The foot ray fixes the ground contact point; a vertical billboard through
/// it, facing the camera, is hit by the head ray.
pub fn calibrate_height(foot: &Vector2<f64>, head: &Vector2<f64>, cam: &CameraModel) -> Result<f64> {
    let f = ground_point(foot, cam)?;
    let c = cam.center();
    let n = cam.ground.normal;
    let view = f - c;
    let horizontal = view - n * n.dot(&view);
    if horizontal.norm() < 1e-9 * view.norm().max(1.0) {
        return Err(Error::ParallelRay);
    }
    let normal = horizontal.normalize();
    let d = cam.ray_direction(head);
    let denom = normal.dot(&d);
    if denom.abs() < 1e-9 {
        return Err(Error::ParallelRay);
    }
    let mu = normal.dot(&(f - c)) / denom;
    if mu <= 0.0 {
        return Err(Error::ParallelRay);
    }
    Ok(cam.ground.signed_distance(&(c + d * mu)))
}

/// Mean bone lengths over the first [`BONE_FRAMES`] predictions, as unit
/// height lengths plus the metric height they were divided by.
pub fn estimate_bone_lengths(frames: &[Pose3D]) -> Result<(BoneLengths, f64)> {
    if frames.len() < BONE_FRAMES {
        return Err(Error::InvalidInput(format!(
            "bone lengths need {BONE_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    Ok(mean_bone_lengths(&frames[..BONE_FRAMES]))
}

/// Mean bone lengths over any non-empty set of frames.
pub fn mean_bone_lengths(frames: &[Pose3D]) -> (BoneLengths, f64) {
    let mut b = [0.0; NUM_JOINTS];
    for j in Joint::ALL.into_iter().skip(1) {
        let p = j.parent().expect("non-root");
        let sum: f64 = frames.iter().map(|f| (f[j.index()] - f[p.index()]).norm()).sum();
        b[j.index()] = (sum / frames.len().max(1) as f64).max(1e-6);
    }
    BoneLengths(b).normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{forward_kinematics, global_positions, GroundPlane, PoseParams, NUM_DOF};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

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

    #[test]
    fn standing_subject_height() {
        let cam = camera();
        for (x, z) in [(0.0, 5.0), (1.2, 6.5), (-1.5, 7.5)] {
            let mut t = [0.0; NUM_DOF];
            t[0] = x;
            t[2] = z;
            t[5] = std::f64::consts::PI;
            let theta = PoseParams(t);
            let b = BoneLengths::reference();
            let fk = forward_kinematics(&theta, &b);
            let mut theta = theta;
            theta.0[1] = -fk[Joint::LAnkle.index()].y * 1.7;
            let g = global_positions(&theta, &b, 1.7);
            let foot = (g[Joint::LAnkle.index()] + g[Joint::RAnkle.index()]) / 2.0;
            let head = g[Joint::Head.index()];
            let h = calibrate_height(&cam.project(&foot).unwrap().pixel, &cam.project(&head).unwrap().pixel, &cam).unwrap();
            assert!((h - 1.7).abs() < 0.01, "{h}");
        }
    }

    #[test]
    fn straight_down_camera_is_degenerate() {
        let cam = CameraModel::look_at(
            500.0,
            Vector2::new(256.0, 160.0),
            Vector3::new(0.0, 5.0, 0.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::z(),
            GroundPlane::horizontal(),
        )
        .unwrap();
        let centre = Vector2::new(256.0, 160.0);
        assert!(matches!(
            calibrate_height(&centre, &Vector2::new(256.0, 150.0), &cam),
            Err(Error::ParallelRay)
        ));
    }

    #[test]
    fn horizon_ray_is_parallel() {
        let cam = camera();
        // a pixel above the horizon never reaches the ground
        assert!(matches!(ground_point(&Vector2::new(256.0, 0.0), &cam), Err(Error::ParallelRay)));
    }

    #[test]
    fn bone_lengths_from_constant_predictions() {
        let b = BoneLengths::reference().scaled(1.8);
        let theta = PoseParams([0.1; NUM_DOF]);
        let pose = forward_kinematics(&theta, &b);
        let (unit, scale) = estimate_bone_lengths(&[pose; 10]).unwrap();
        assert!((scale - 1.8).abs() < 1e-12);
        for j in Joint::ALL.into_iter().skip(1) {
            assert!((unit.get(j) * scale - b.get(j)).abs() < 1e-12);
        }
        assert!(estimate_bone_lengths(&[pose; 9]).is_err());
    }

    #[test]
    fn noisy_bone_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 0.005).unwrap();
        let b = BoneLengths::reference().scaled(1.7);
        let pose = forward_kinematics(&PoseParams::default(), &b);
        let mut errs = Vec::new();
        for _ in 0..200 {
            let frames: Vec<Pose3D> = (0..10)
                .map(|_| pose.map(|p| p + Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng))))
                .collect();
            let (unit, scale) = estimate_bone_lengths(&frames).unwrap();
            for j in Joint::ALL.into_iter().skip(1) {
                errs.push((unit.get(j) * scale - b.get(j)).abs());
            }
        }
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        assert!(median < 0.003, "median bone error {median}");
    }
}
