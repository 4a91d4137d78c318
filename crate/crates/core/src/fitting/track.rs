//! Per-subject fitting state: filtering, initialization, per-frame fits and
//! failure monitoring.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::calibration::{calibrate_height, ground_point, mean_bone_lengths, BONE_FRAMES};
use super::energy::{recovery_gradient_norm, EnergyWeights, Model, Targets, Terms};
use super::filter::{FilterBank, OneEuroParams};
use super::limits::JointLimits;
use super::solver::{global_dof, minimize, rotation_dof, SolveReport, SolverOptions, ALL_DOF};
use crate::error::{Error, Result};
use crate::skeleton::{
    forward_kinematics, global_positions, BoneLengths, CameraModel, DofLayout, Joint, Pose3D,
    PoseParams, NUM_DOF, NUM_JOINTS,
};

/// Visible 2D joints required to start a track.
pub const MIN_INIT_JOINTS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    /// Gradient-norm threshold τ on `w3D·E3D + wlim·Elim`.
    pub threshold: f64,
    /// Consecutive frames above τ before the track is restarted.
    pub frames: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_RECOVERY_THRESHOLD,
            frames: 30,
        }
    }
}

/// 5× the 95th percentile of post-fit gradient norms on clean simulated
/// runs (see `calibrate_recovery_threshold`).
pub const DEFAULT_RECOVERY_THRESHOLD: f64 = 0.06;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub weights: EnergyWeights,
    pub limits: JointLimits,
    pub solver: SolverOptions,
    /// Iteration cap for each of the two initialization phases.
    pub init_iterations: usize,
    pub filter: OneEuroParams,
    /// One-euro filtering of the 2D and 3D predictions.
    pub smoothing: bool,
    pub recovery: RecoveryConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            limits: JointLimits::anatomical(),
            solver: SolverOptions::default(),
            init_iterations: 400,
            filter: OneEuroParams::default(),
            smoothing: true,
            recovery: RecoveryConfig::default(),
        }
    }
}

/// Stage I/II output for one subject in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub time: f64,
    /// Root-relative pose in camera axes, meters.
    pub p3d: Pose3D,
    /// Pixels; joints with zero confidence are invisible.
    pub p2d: [Vector2<f64>; NUM_JOINTS],
    pub confidence: [f64; NUM_JOINTS],
}

impl Measurement {
    pub fn visible(&self, j: Joint) -> bool {
        self.confidence[j.index()] > 0.0
    }

    pub fn visible_count(&self) -> usize {
        self.confidence.iter().filter(|c| **c > 0.0).count()
    }
}

/// Standing pose with arms lowered; the starting point of every new track.
pub fn neutral_pose() -> PoseParams {
    let layout = DofLayout::get();
    let mut t = [0.0; NUM_DOF];
    let mut set = |j: Joint, k: usize, v: f64| t[layout.blocks[j.index()].start + k] = v;
    set(Joint::LShoulder, 0, -1.2);
    set(Joint::RShoulder, 0, 1.2);
    set(Joint::LElbow, 0, -0.35);
    set(Joint::RElbow, 0, 0.35);
    set(Joint::LKnee, 0, 0.1);
    set(Joint::RKnee, 0, 0.1);
    PoseParams(t)
}

/// Yaw that turns the rest-pose hip axis (+x) onto the observed one.
fn yaw_from_hips(p3d: &Pose3D) -> f64 {
    let v = p3d[Joint::LHip.index()] - p3d[Joint::RHip.index()];
    (-v.z).atan2(v.x)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct InitReport {
    pub local: SolveReport,
    pub global: SolveReport,
    /// Fewer than all 2D joints were visible.
    pub partial: bool,
}

/// Lower of the two ankles in a root-relative pose (world axes).
fn support_ankle(p: &Pose3D) -> Joint {
    if p[Joint::LAnkle.index()].y <= p[Joint::RAnkle.index()].y {
        Joint::LAnkle
    } else {
        Joint::RAnkle
    }
}

/// Two-phase initialization: local angles and root rotation against the 3D
/// prediction (E_3D + E_lim), then root translation and rotation against
/// the 2D prediction (E_2D) with local angles fixed.
pub fn init_track(
    targets: &Targets,
    bones: &BoneLengths,
    height: f64,
    cam: &CameraModel,
    cfg: &FitConfig,
) -> Result<(PoseParams, InitReport)> {
    let visible = targets.confidence.iter().filter(|c| **c > 0.0).count();
    if targets.confidence[Joint::Neck.index()] <= 0.0 || visible < MIN_INIT_JOINTS {
        return Err(Error::TooFewJoints {
            visible,
            required: MIN_INIT_JOINTS,
        });
    }
    let opts = SolverOptions {
        max_iterations: cfg.init_iterations,
        ..cfg.solver.clone()
    };

    let mut theta = neutral_pose();
    theta.0[5] = yaw_from_hips(&targets.p3d);
    let w_local = cfg.weights.only(Terms {
        e3d: true,
        e2d: false,
        lim: true,
        temp: false,
        depth: false,
    });
    let model = Model {
        bones,
        height,
        camera: cam,
        weights: &w_local,
        limits: &cfg.limits,
        prev: None,
        prev2: None,
    };
    let (theta1, local) = minimize(&theta, targets, &model, &rotation_dof(), &opts)?;
    theta = theta1;

    // Closed-form translation guess: the support ankle stands on the ground
    // under its detection, or failing that the neck sits 6 m down its ray.
    let fk = forward_kinematics(&theta, bones);
    let ankle = support_ankle(&fk);
    let anchor = if targets.confidence[ankle.index()] > 0.0 {
        ground_point(&targets.p2d[ankle.index()], cam)
            .ok()
            .map(|g| g - fk[ankle.index()] * height)
    } else {
        None
    };
    let t = anchor.unwrap_or_else(|| {
        let neck = cam.center() + cam.ray_direction(&targets.p2d[Joint::Neck.index()]) * 6.0;
        neck - fk[Joint::Neck.index()] * height
    });
    theta.set_translation(t);

    let w_global = cfg.weights.only(Terms {
        e3d: false,
        e2d: true,
        lim: false,
        temp: false,
        depth: false,
    });
    let model = Model {
        weights: &w_global,
        ..model
    };
    let (theta2, global) = minimize(&theta, targets, &model, &global_dof(), &opts)?;
    let total_2d = Joint::ALL.into_iter().filter(|j| j.has_2d()).count();
    Ok((
        theta2,
        InitReport {
            local,
            global,
            partial: visible < total_2d,
        },
    ))
}

/// Gradient descent from the previous frame's θ on the full energy.
pub fn fit_frame(
    theta_prev: &PoseParams,
    targets: &Targets,
    model: &Model,
    opts: &SolverOptions,
) -> Result<(PoseParams, SolveReport)> {
    minimize(theta_prev, targets, model, &ALL_DOF, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryDecision {
    Keep,
    Reinitialize,
}

/// Counts consecutive frames whose gradient norm exceeds τ.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryMonitor {
    pub config: RecoveryConfig,
    run: usize,
}

impl RecoveryMonitor {
    pub fn new(config: RecoveryConfig) -> Self {
        Self { config, run: 0 }
    }

    pub fn run_length(&self) -> usize {
        self.run
    }

    pub fn observe(&mut self, gradient_norm: f64) -> RecoveryDecision {
        if gradient_norm > self.config.threshold {
            self.run += 1;
        } else {
            self.run = 0;
        }
        if self.run >= self.config.frames {
            self.run = 0;
            RecoveryDecision::Reinitialize
        } else {
            RecoveryDecision::Keep
        }
    }
}

/// τ from post-fit gradient norms of clean runs: 5× their 95th percentile.
pub fn calibrate_recovery_threshold(norms: &[f64]) -> f64 {
    if norms.is_empty() {
        return DEFAULT_RECOVERY_THRESHOLD;
    }
    let mut v = norms.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() as f64 * 0.95).ceil() as usize).clamp(1, v.len()) - 1;
    5.0 * v[idx]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameFit {
    pub theta: PoseParams,
    /// Metric world positions.
    pub world: Pose3D,
    /// Metric root-relative positions in world axes.
    pub local: Pose3D,
    pub height: f64,
    pub report: SolveReport,
    pub recovery_norm: f64,
    pub decision: RecoveryDecision,
    pub initialized_now: bool,
}

/// Fitting state of one subject.
#[derive(Clone, Debug)]
pub struct PoseTrack {
    pub bones: BoneLengths,
    /// Metric height of the skeleton implied by the 3D predictions.
    pub scale: f64,
    pub height: f64,
    pub theta: Option<PoseParams>,
    prev: Option<PoseParams>,
    bone_frames: Vec<Pose3D>,
    height_samples: Vec<f64>,
    filter_2d: FilterBank,
    filter_3d: FilterBank,
    pub monitor: RecoveryMonitor,
    pub frames_fitted: usize,
    pub init_report: Option<InitReport>,
}

impl PoseTrack {
    pub fn new(cfg: &FitConfig) -> Self {
        Self {
            bones: BoneLengths::reference(),
            scale: 1.0,
            height: 1.0,
            theta: None,
            prev: None,
            bone_frames: Vec::new(),
            height_samples: Vec::new(),
            filter_2d: FilterBank::new(cfg.filter, 2 * NUM_JOINTS),
            filter_3d: FilterBank::new(cfg.filter, 3 * NUM_JOINTS),
            monitor: RecoveryMonitor::new(cfg.recovery.clone()),
            frames_fitted: 0,
            init_report: None,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.theta.is_some()
    }

    /// Filtered copy of the measurement (2D in pixels, 3D in millimeters).
    fn filtered(&mut self, m: &Measurement, cfg: &FitConfig) -> Result<Measurement> {
        let mut out = m.clone();
        if !cfg.smoothing {
            return Ok(out);
        }
        let mut v2 = [0.0; 2 * NUM_JOINTS];
        let mut mask2 = [false; 2 * NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            v2[2 * j] = m.p2d[j].x;
            v2[2 * j + 1] = m.p2d[j].y;
            mask2[2 * j] = m.confidence[j] > 0.0;
            mask2[2 * j + 1] = m.confidence[j] > 0.0;
        }
        self.filter_2d.apply(&mut v2, Some(&mask2), m.time)?;
        let mut v3 = [0.0; 3 * NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            for a in 0..3 {
                v3[3 * j + a] = m.p3d[j][a] * 1000.0;
            }
        }
        self.filter_3d.apply(&mut v3, None, m.time)?;
        for j in 0..NUM_JOINTS {
            out.p2d[j] = Vector2::new(v2[2 * j], v2[2 * j + 1]);
            out.p3d[j] = Vector3::new(v3[3 * j], v3[3 * j + 1], v3[3 * j + 2]) / 1000.0;
        }
        Ok(out)
    }

    /// Head height over ground from this frame's detections, corrected for
    /// the pose (a bent subject's head is lower than its skeleton height).
    fn height_sample(m: &Measurement, world: &Pose3D, scale: f64, cam: &CameraModel) -> Option<f64> {
        let ankle = support_ankle(world);
        if !(m.visible(ankle) && m.visible(Joint::Head)) {
            return None;
        }
        let head = calibrate_height(&m.p2d[ankle.index()], &m.p2d[Joint::Head.index()], cam).ok()?;
        let ratio = (world[Joint::Head.index()].y - world[ankle.index()].y) / scale;
        (ratio > 0.5).then(|| head / ratio)
    }

    fn reset(&mut self, cfg: &FitConfig) {
        *self = Self::new(cfg);
    }

    /// Processes one frame. Returns `None` while initialization is deferred.
    pub fn update(&mut self, raw: &Measurement, cam: &CameraModel, cfg: &FitConfig) -> Result<Option<FrameFit>> {
        let m = self.filtered(raw, cfg)?;
        let world: Pose3D = m.p3d.map(|p| cam.rotation.transpose() * p);

        if self.bone_frames.len() < BONE_FRAMES {
            self.bone_frames.push(world);
            let (b, s) = mean_bone_lengths(&self.bone_frames);
            self.bones = b;
            self.scale = s;
        }
        if self.height_samples.len() < BONE_FRAMES {
            if let Some(h) = Self::height_sample(&m, &world, self.scale, cam) {
                self.height_samples.push(h);
            }
        }
        self.height = if self.height_samples.is_empty() {
            self.scale
        } else {
            median(&self.height_samples)
        };

        let targets = Targets {
            p3d: world.map(|p| p / self.scale),
            p2d: m.p2d,
            confidence: m.confidence,
        };

        let (theta, report, initialized_now) = match self.theta {
            None => match init_track(&targets, &self.bones, self.height, cam, cfg) {
                Ok((theta, rep)) => {
                    let r = rep.global.clone();
                    self.init_report = Some(rep);
                    (theta, r, true)
                }
                Err(Error::TooFewJoints { .. }) => return Ok(None),
                Err(e) => return Err(e),
            },
            Some(prev) => {
                let model = Model {
                    bones: &self.bones,
                    height: self.height,
                    camera: cam,
                    weights: &cfg.weights,
                    limits: &cfg.limits,
                    prev: Some(&prev),
                    prev2: self.prev.as_ref(),
                };
                let (t, r) = fit_frame(&prev, &targets, &model, &cfg.solver)?;
                (t, r, false)
            }
        };

        let model = Model {
            bones: &self.bones,
            height: self.height,
            camera: cam,
            weights: &cfg.weights,
            limits: &cfg.limits,
            prev: None,
            prev2: None,
        };
        let recovery_norm = recovery_gradient_norm(&theta, &targets, &model)?;
        let decision = self.monitor.observe(recovery_norm);

        let fit = FrameFit {
            theta,
            world: global_positions(&theta, &self.bones, self.height),
            local: forward_kinematics(&theta, &self.bones).map(|p| p * self.height),
            height: self.height,
            report,
            recovery_norm,
            decision,
            initialized_now,
        };
        if decision == RecoveryDecision::Reinitialize {
            self.reset(cfg);
        } else {
            self.prev = self.theta;
            self.theta = Some(theta);
            self.frames_fitted += 1;
        }
        Ok(Some(fit))
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
