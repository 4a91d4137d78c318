//! Skeleton fitting driven by simulator ground truth: the 3D and 2D inputs
//! are the exact camera-relative pose and pixels of the simulated subject.

use mocap_core::fitting::{FitConfig, Measurement, PoseTrack, RecoveryDecision};
use mocap_core::simulator::{generate_scene, PersonView, SceneFrame, SceneSpec, Script};
use mocap_core::skeleton::{Joint, NUM_JOINTS};

fn measurement(frame: &SceneFrame, view: &PersonView) -> Measurement {
    Measurement {
        time: frame.time,
        p3d: view.camera_relative,
        p2d: view.pixels,
        confidence: std::array::from_fn(|j| if view.visible[j] && Joint::from_index(j).unwrap().has_2d() { 1.0 } else { 0.0 }),
    }
}

fn single(scripts: Vec<Script>, n_frames: usize, seed: u64) -> Vec<SceneFrame> {
    generate_scene(&SceneSpec { n_persons: 1, n_frames, seed, scripts, ..SceneSpec::default() }).unwrap()
}

#[test]
fn root_height_follows_a_jump() {
    let frames = single(vec![Script::Jump { person: 0, start: 40, frames: 20, peak: 0.3 }], 90, 4);
    // input filtering lags a 0.67 s jump by a few frames; this checks the
    // one-off height calibration, so the inputs go in unfiltered
    let cfg = FitConfig { smoothing: false, ..FitConfig::default() };
    let mut track = PoseTrack::new(&cfg);
    let ground = frames[0].persons[0].theta.0[1];
    let mut peak_truth: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for f in &frames {
        let view = &f.views()[0];
        let fit = track.update(&measurement(f, view), &f.camera, &cfg).unwrap().expect("fully visible subject");
        if f.index < 10 {
            continue;
        }
        let truth = view.world[Joint::Pelvis.index()].y;
        peak_truth = peak_truth.max(truth - ground);
        worst = worst.max((fit.world[Joint::Pelvis.index()].y - truth).abs());
    }
    assert!(peak_truth > 0.25, "the scripted jump lifts the root ({peak_truth:.3} m)");
    assert!(worst < 0.03, "root height error {worst:.4} m");
}

#[test]
fn fitted_skeleton_reprojects_onto_the_detections() {
    let frames = single(Vec::new(), 60, 9);
    let cfg = FitConfig::default();
    let mut track = PoseTrack::new(&cfg);
    let (mut sum, mut n) = (0.0, 0);
    for f in &frames {
        let view = &f.views()[0];
        let fit = track.update(&measurement(f, view), &f.camera, &cfg).unwrap().unwrap();
        if f.index < 10 {
            continue;
        }
        for j in (0..NUM_JOINTS).filter(|&j| view.visible[j] && Joint::from_index(j).unwrap().has_2d()) {
            sum += (f.camera.project(&fit.world[j]).unwrap().pixel - view.pixels[j]).norm();
            n += 1;
        }
    }
    let mean = sum / n as f64;
    assert!(mean < 1.0, "mean reprojection error {mean:.3} px");
}

#[test]
fn fitted_poses_respect_joint_limits() {
    let frames = single(Vec::new(), 60, 2);
    let cfg = FitConfig::default();
    let mut track = PoseTrack::new(&cfg);
    for f in &frames {
        let fit = track.update(&measurement(f, &f.views()[0]), &f.camera, &cfg).unwrap().unwrap();
        let v = cfg.limits.max_violation(&fit.theta.0);
        assert!(v <= 0.05, "frame {}: {v:.4} rad", f.index);
    }
}

/// The 3D prediction flips the left arm upward from `start` on while the 2D
/// detections stay correct.
fn run_with_wrong_arm(start: Option<usize>) -> (Vec<f64>, Vec<usize>) {
    let frames = single(Vec::new(), 120, 6);
    let cfg = FitConfig::default();
    let mut track = PoseTrack::new(&cfg);
    let (mut norms, mut resets) = (Vec::new(), Vec::new());
    for f in &frames {
        let view = &f.views()[0];
        let mut m = measurement(f, view);
        if start.is_some_and(|s| f.index >= s) {
            let sh = m.p3d[Joint::LShoulder.index()];
            for j in [Joint::LElbow, Joint::LWrist] {
                let r = m.p3d[j.index()] - sh;
                m.p3d[j.index()] = sh + nalgebra::Vector3::new(r.x, -r.y, r.z);
            }
        }
        let fit = track.update(&m, &f.camera, &cfg).unwrap().unwrap();
        norms.push(fit.recovery_norm);
        if fit.decision == RecoveryDecision::Reinitialize {
            resets.push(f.index);
        }
    }
    (norms, resets)
}

#[test]
fn persistent_inconsistency_restarts_the_track_after_thirty_frames() {
    let tau = FitConfig::default().recovery.threshold;
    let (clean, resets) = run_with_wrong_arm(None);
    assert!(resets.is_empty(), "clean run restarted at {resets:?}");
    assert!(clean.iter().all(|&n| n < tau), "clean norms peak at {:.4}", clean.iter().cloned().fold(0.0, f64::max));

    let (norms, resets) = run_with_wrong_arm(Some(40));
    let first_bad = norms.iter().position(|&n| n > tau).expect("corruption is detected");
    assert!(first_bad >= 40);
    assert!(norms[first_bad..first_bad + 30].iter().all(|&n| n > tau));
    assert_eq!(resets.first(), Some(&(first_bad + 29)), "norms {:?}", &norms[38..]);
}
