//! Synthetic multi-person scenes and the Stage I maps a trained network would
//! emit for them (heatmaps, part affinity fields, 3D pose encodings).

use std::io::{Read, Write};

use nalgebra::{Vector2, Vector3};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{build_mode_mask, encode, EncodingMode, SparsityMask, ENCODING_DIM};
use crate::error::{Error, Result};
use crate::fitting::limits::JointLimits;
use crate::skeleton::{
    global_positions, BoneLengths, CameraModel, DofLayout, GroundPlane, Joint, JointSet,
    Pose3D, PoseParams, GLOBAL_DOF, NUM_DOF, NUM_JOINTS,
};

/// Output stride of the Stage I maps.
pub const MAP_STRIDE: f64 = 8.0;

pub fn pixel_to_map(px: &Vector2<f64>) -> Vector2<f64> {
    px / MAP_STRIDE - Vector2::new(0.5, 0.5)
}

pub fn map_to_pixel(m: &Vector2<f64>) -> Vector2<f64> {
    (m + Vector2::new(0.5, 0.5)) * MAP_STRIDE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub focal: f64,
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            focal: 500.0,
            eye: [0.0, 1.6, 0.0],
            target: [0.0, 1.0, 6.0],
        }
    }
}

impl CameraSpec {
    pub fn build(&self, width: u32, height: u32) -> Result<CameraModel> {
        CameraModel::look_at(
            self.focal,
            Vector2::new(width as f64 / 2.0, height as f64 / 2.0),
            Vector3::from(self.eye),
            Vector3::from(self.target),
            Vector3::y(),
            GroundPlane::horizontal(),
        )
    }
}

/// Explicit path for one subject; otherwise paths are drawn from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    /// Ground position (x, z) at t = 0.
    pub start: [f64; 2],
    /// Constant ground velocity (x, z) in m/s.
    pub velocity: [f64; 2],
    /// Facing angle about +y; π faces the default camera.
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Script {
    /// Every joint of `person` hidden for `frames` frames starting at `start`.
    Hide {
        person: usize,
        start: usize,
        frames: usize,
    },
    /// Vertical root bump of `peak` meters lasting `frames` frames.
    Jump {
        person: usize,
        start: usize,
        frames: usize,
        peak: f64,
    },
    /// Linear hue drift of the subject's clothing, in hue units per second.
    HueDrift { person: usize, rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub n_persons: usize,
    pub n_frames: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub camera: CameraSpec,
    /// Scale on the random joint-angle excursions (0 freezes the pose).
    pub motion_amplitude: f64,
    /// Walking gait on top of the random excursions.
    pub walking: bool,
    pub paths: Vec<PathSpec>,
    pub scripts: Vec<Script>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_persons: 2,
            n_frames: 100,
            seed: 0,
            width: 512,
            height: 320,
            fps: 30.0,
            camera: CameraSpec::default(),
            motion_amplitude: 1.0,
            walking: true,
            paths: Vec::new(),
            scripts: Vec::new(),
        }
    }
}

/// Clothing color model used for appearance histograms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub seed: u64,
    pub hue: f64,
    pub saturation: f64,
    pub secondary_hue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonFrame {
    pub id: usize,
    pub theta: PoseParams,
    /// Unit-height bone lengths.
    pub bones: BoneLengths,
    /// Absolute height in meters.
    pub height: f64,
    pub appearance: Appearance,
    pub hidden: bool,
}

impl PersonFrame {
    pub fn world_joints(&self) -> Pose3D {
        global_positions(&self.theta, &self.bones, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub index: usize,
    pub time: f64,
    pub width: u32,
    pub height: u32,
    pub camera: CameraModel,
    pub persons: Vec<PersonFrame>,
}

/// Per-subject ground truth derived from a frame: projections, visibility
/// and the camera-aligned root-relative pose a decoder should output.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonView {
    pub id: usize,
    pub world: Pose3D,
    pub pixels: [Vector2<f64>; NUM_JOINTS],
    pub depth: [f64; NUM_JOINTS],
    pub in_front: [bool; NUM_JOINTS],
    pub occluded: [bool; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
    /// Root-relative positions rotated into camera axes, meters.
    pub camera_relative: Pose3D,
}

/// Limb capsule radius in meters, per bone (indexed by child joint).
fn limb_radius(j: Joint) -> f64 {
    use Joint::*;
    match j {
        Spine | Neck => 0.13,
        LHip | RHip => 0.09,
        Head => 0.10,
        LShoulder | RShoulder => 0.06,
        LElbow | RElbow | LWrist | RWrist => 0.05,
        LKnee | RKnee => 0.08,
        LAnkle | RAnkle => 0.06,
        LFootTip | RFootTip => 0.04,
        Pelvis => 0.0,
    }
}

/// Image-space capsule with depth interpolated along its axis.
#[derive(Clone, Copy, Debug)]
struct Capsule {
    a: Vector2<f64>,
    b: Vector2<f64>,
    depth_a: f64,
    depth_b: f64,
    radius: f64,
}

impl Capsule {
    /// Depth of the capsule surface covering `p`, if it does.
    fn cover_depth(&self, p: &Vector2<f64>) -> Option<f64> {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let closest = self.a + ab * t;
        if (p - closest).norm() <= self.radius {
            Some(self.depth_a + (self.depth_b - self.depth_a) * t)
        } else {
            None
        }
    }
}

fn person_capsules(view: &PersonView, focal: f64) -> Vec<Capsule> {
    Joint::ALL
        .into_iter()
        .filter_map(|j| {
            let p = j.parent()?;
            let (a, b) = (p.index(), j.index());
            if !(view.in_front[a] && view.in_front[b]) {
                return None;
            }
            let depth = 0.5 * (view.depth[a] + view.depth[b]);
            Some(Capsule {
                a: view.pixels[a],
                b: view.pixels[b],
                depth_a: view.depth[a],
                depth_b: view.depth[b],
                radius: limb_radius(j) * focal / depth,
            })
        })
        .collect()
}

impl SceneFrame {
    pub fn views(&self) -> Vec<PersonView> {
        let (w, h) = (self.width as f64, self.height as f64);
        let cam = &self.camera;
        let mut views: Vec<PersonView> = self
            .persons
            .iter()
            .map(|p| {
                let world = p.world_joints();
                let mut pixels = [Vector2::zeros(); NUM_JOINTS];
                let mut depth = [0.0; NUM_JOINTS];
                let mut in_front = [false; NUM_JOINTS];
                for j in 0..NUM_JOINTS {
                    if let Ok(pr) = cam.project(&world[j]) {
                        pixels[j] = pr.pixel;
                        depth[j] = pr.depth;
                        in_front[j] = true;
                    }
                }
                let root = world[0];
                let camera_relative = world.map(|x| cam.rotation * (x - root));
                PersonView {
                    id: p.id,
                    world,
                    pixels,
                    depth,
                    in_front,
                    occluded: [p.hidden; NUM_JOINTS],
                    visible: [false; NUM_JOINTS],
                    camera_relative,
                }
            })
            .collect();

        let focal = cam.focal().0;
        let capsules: Vec<Vec<Capsule>> = views.iter().map(|v| person_capsules(v, focal)).collect();
        for (i, view) in views.iter_mut().enumerate() {
            for j in 0..NUM_JOINTS {
                if !view.in_front[j] || view.occluded[j] {
                    continue;
                }
                let occluded = capsules.iter().enumerate().any(|(q, caps)| {
                    q != i
                        && !self.persons[q].hidden
                        && caps.iter().any(|c| {
                            c.cover_depth(&view.pixels[j])
                                .is_some_and(|d| d < view.depth[j])
                        })
                });
                view.occluded[j] = occluded;
            }
            for j in Joint::ALL {
                let px = view.pixels[j.index()];
                let inside = px.x >= 0.0 && px.y >= 0.0 && px.x < w && px.y < h;
                view.visible[j.index()] = j.has_2d()
                    && view.in_front[j.index()]
                    && inside
                    && !view.occluded[j.index()];
            }
        }
        views
    }

    pub fn map_size(&self) -> (usize, usize) {
        (
            (self.width as f64 / MAP_STRIDE) as usize,
            (self.height as f64 / MAP_STRIDE) as usize,
        )
    }
}

/// Random-but-smooth joint-angle program of one subject.
#[derive(Clone, Debug)]
struct MotionProgram {
    base: [f64; NUM_DOF],
    /// (dof, amplitude, frequency Hz, phase)
    waves: Vec<(usize, f64, f64, f64)>,
    gait_freq: f64,
    gait_phase: f64,
    walking: bool,
    path: PathSpec,
    bones: BoneLengths,
    height: f64,
    appearance: Appearance,
}

fn neutral_pose() -> [f64; NUM_DOF] {
    let layout = DofLayout::get();
    let mut t = [0.0; NUM_DOF];
    let set = |t: &mut [f64; NUM_DOF], j: Joint, k: usize, v: f64| {
        t[layout.blocks[j.index()].start + k] = v;
    };
    set(&mut t, Joint::LShoulder, 0, -1.2);
    set(&mut t, Joint::RShoulder, 0, 1.2);
    set(&mut t, Joint::LElbow, 0, -0.35);
    set(&mut t, Joint::RElbow, 0, 0.35);
    set(&mut t, Joint::LKnee, 0, 0.1);
    set(&mut t, Joint::RKnee, 0, 0.1);
    t
}

fn sample_bones(rng: &mut ChaCha8Rng) -> BoneLengths {
    let mut b = BoneLengths::reference().0;
    let pairs = [
        (Joint::LShoulder, Joint::RShoulder),
        (Joint::LElbow, Joint::RElbow),
        (Joint::LWrist, Joint::RWrist),
        (Joint::LHip, Joint::RHip),
        (Joint::LKnee, Joint::RKnee),
        (Joint::LAnkle, Joint::RAnkle),
        (Joint::LFootTip, Joint::RFootTip),
    ];
    for j in [Joint::Spine, Joint::Neck, Joint::Head] {
        b[j.index()] *= rng.random_range(0.93..1.07);
    }
    for (l, r) in pairs {
        let s = rng.random_range(0.93..1.07);
        b[l.index()] *= s;
        b[r.index()] *= s;
    }
    BoneLengths(b).normalized().0
}

impl MotionProgram {
    fn sample(
        rng: &mut ChaCha8Rng,
        index: usize,
        n_persons: usize,
        spec: &SceneSpec,
        hue_offset: f64,
    ) -> Self {
        let limits = JointLimits::anatomical();
        let base = neutral_pose();
        let mut waves = Vec::new();
        for d in GLOBAL_DOF..NUM_DOF {
            let (lo, hi) = (limits.min[d - GLOBAL_DOF], limits.max[d - GLOBAL_DOF]);
            let range = hi - lo;
            for _ in 0..2 {
                let amp = spec.motion_amplitude * range * rng.random_range(0.02..0.08);
                let freq = rng.random_range(0.05..0.4);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                waves.push((d, amp, freq, phase));
            }
        }
        // small torso lean
        waves.push((4, 0.04 * spec.motion_amplitude, rng.random_range(0.05..0.2), rng.random_range(0.0..std::f64::consts::TAU)));

        let path = spec.paths.get(index).cloned().unwrap_or_else(|| {
            let lane = (index as f64 + 0.5) / n_persons as f64;
            let z = rng.random_range(5.5..7.5);
            let half_width = 0.42 * z * spec.width as f64 / spec.camera.focal;
            let x = -half_width + 2.0 * half_width * lane;
            let speed = if spec.walking {
                rng.random_range(-0.08..0.08)
            } else {
                0.0
            };
            PathSpec {
                start: [x, z],
                velocity: [speed, rng.random_range(-0.03..0.03)],
                yaw: std::f64::consts::PI + rng.random_range(-0.5..0.5),
            }
        });

        let hue = (hue_offset + index as f64 / n_persons.max(1) as f64).fract();
        Self {
            base,
            waves,
            gait_freq: rng.random_range(0.4..0.6),
            gait_phase: rng.random_range(0.0..std::f64::consts::TAU),
            walking: spec.walking,
            path,
            bones: sample_bones(rng),
            height: rng.random_range(1.55..1.9),
            appearance: Appearance {
                seed: rng.random(),
                hue,
                saturation: rng.random_range(0.45..0.9),
                secondary_hue: (hue + 0.5).fract(),
            },
        }
    }

    fn theta_at(&self, t: f64, limits: &JointLimits) -> PoseParams {
        let mut th = self.base;
        for &(d, amp, f, ph) in &self.waves {
            th[d] += amp * (std::f64::consts::TAU * f * t + ph).sin();
        }
        if self.walking {
            let layout = DofLayout::get();
            let g = std::f64::consts::TAU * self.gait_freq * t + self.gait_phase;
            let hip_x = |j: Joint| layout.blocks[j.index()].start + 1;
            let sh_y = |j: Joint| layout.blocks[j.index()].start + 2;
            th[hip_x(Joint::LHip)] += 0.25 * g.sin();
            th[hip_x(Joint::RHip)] -= 0.25 * g.sin();
            th[layout.blocks[Joint::LKnee.index()].start] += 0.2 * (1.0 - g.cos());
            th[layout.blocks[Joint::RKnee.index()].start] += 0.2 * (1.0 + g.cos());
            th[sh_y(Joint::LShoulder)] += 0.2 * g.sin();
            th[sh_y(Joint::RShoulder)] += 0.2 * g.sin();
        }
        for d in GLOBAL_DOF..NUM_DOF {
            let (lo, hi) = (limits.min[d - GLOBAL_DOF], limits.max[d - GLOBAL_DOF]);
            let margin = 0.02 * (hi - lo);
            th[d] = th[d].clamp(lo + margin, hi - margin);
        }
        th[5] += self.path.yaw;
        let mut theta = PoseParams(th);
        let x = self.path.start[0] + self.path.velocity[0] * t;
        let z = self.path.start[1] + self.path.velocity[1] * t;
        theta.set_translation(Vector3::new(x, 0.0, z));
        theta
    }
}

/// Deterministic scene sequence. Feet (the lower ankle) rest on the ground
/// plane unless a jump script lifts the subject.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<SceneFrame>> {
    if spec.n_persons == 0 {
        return Err(Error::InvalidInput("scene needs at least one person".into()));
    }
    if !spec.width.is_multiple_of(16) || !spec.height.is_multiple_of(16) {
        return Err(Error::InvalidInput(format!(
            "image size {}x{} must be divisible by 16",
            spec.width, spec.height
        )));
    }
    let camera = spec.camera.build(spec.width, spec.height)?;
    let limits = JointLimits::anatomical();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hue_offset: f64 = rng.random();
    let programs: Vec<MotionProgram> = (0..spec.n_persons)
        .map(|i| MotionProgram::sample(&mut rng, i, spec.n_persons, spec, hue_offset))
        .collect();

    let frames = (0..spec.n_frames.max(1))
        .map(|f| {
            let time = f as f64 / spec.fps;
            let persons = programs
                .iter()
                .enumerate()
                .map(|(i, prog)| {
                    let mut theta = prog.theta_at(time, &limits);
                    let fk = crate::skeleton::forward_kinematics(&theta, &prog.bones);
                    let lowest = fk[Joint::LAnkle.index()].y.min(fk[Joint::RAnkle.index()].y);
                    let mut lift = 0.0;
                    let mut hidden = false;
                    let mut appearance = prog.appearance;
                    for s in &spec.scripts {
                        match *s {
                            Script::Jump {
                                person,
                                start,
                                frames,
                                peak,
                            } if person == i && f >= start && f < start + frames => {
                                let u = (f - start) as f64 / frames as f64;
                                lift += peak * (std::f64::consts::PI * u).sin();
                            }
                            Script::Hide {
                                person,
                                start,
                                frames,
                            } if person == i && f >= start && f < start + frames => {
                                hidden = true;
                            }
                            Script::HueDrift { person, rate } if person == i => {
                                appearance.hue = (appearance.hue + rate * time).rem_euclid(1.0);
                                appearance.secondary_hue =
                                    (appearance.secondary_hue + rate * time).rem_euclid(1.0);
                            }
                            _ => {}
                        }
                    }
                    let mut t = theta.translation();
                    t.y = -lowest * prog.height + lift;
                    theta.set_translation(t);
                    PersonFrame {
                        id: i,
                        theta,
                        bones: prog.bones,
                        height: prog.height,
                        appearance,
                        hidden,
                    }
                })
                .collect();
            SceneFrame {
                index: f,
                time,
                width: spec.width,
                height: spec.height,
                camera: camera.clone(),
                persons,
            }
        })
        .collect();
    Ok(frames)
}

/// `generate_scene` with default layout and camera.
pub fn generate_motion(n_persons: usize, n_frames: usize, seed: u64) -> Result<Vec<SceneFrame>> {
    generate_scene(&SceneSpec {
        n_persons,
        n_frames,
        seed,
        ..SceneSpec::default()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub heatmap: f64,
    pub paf: f64,
    /// Standard deviation on encoding channels, meters.
    pub encoding: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            heatmap: 0.0,
            paf: 0.0,
            encoding: 0.0,
            seed: 0,
        }
    }

    /// Same σ on heatmaps and PAFs; encodings get `σ / 10` meters.
    pub fn uniform(sigma: f64, seed: u64) -> Self {
        Self {
            heatmap: sigma,
            paf: sigma,
            encoding: sigma * 0.1,
            seed,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.heatmap == 0.0 && self.paf == 0.0 && self.encoding == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Heatmap Gaussian σ in map cells.
    pub heatmap_sigma: f64,
    /// Full PAF band width in map cells.
    pub paf_width: f64,
    /// Encoding vectors are written in a `(2r+1)²` cell neighborhood.
    pub encoding_radius: usize,
    pub encoding_mode: EncodingMode,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            heatmap_sigma: 2.0,
            paf_width: 4.0,
            encoding_radius: 1,
            encoding_mode: EncodingMode::ChannelSparse,
        }
    }
}

/// Stage I outputs at `w/8 × h/8`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOneMaps {
    /// `[J, H, W]`
    pub heatmaps: Array3<f32>,
    /// `[J, 2, H, W]`, limb from joint `j` to its parent.
    pub pafs: Array4<f32>,
    /// `[3J, H, W]`
    pub encodings: Array3<f32>,
    /// Ground truth occlusion per person and joint.
    pub occluded: Vec<[bool; NUM_JOINTS]>,
}

impl StageOneMaps {
    pub fn map_width(&self) -> usize {
        self.heatmaps.shape()[2]
    }

    pub fn map_height(&self) -> usize {
        self.heatmaps.shape()[1]
    }

    pub fn encoding_at(&self, x: usize, y: usize) -> [f64; ENCODING_DIM] {
        let mut l = [0.0; ENCODING_DIM];
        for (c, v) in l.iter_mut().enumerate() {
            *v = self.encodings[(c, y, x)] as f64;
        }
        l
    }
}

fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

pub fn render_stage1(frame: &SceneFrame, noise: &NoiseSpec) -> StageOneMaps {
    render_stage1_with(frame, noise, &RenderConfig::default())
}

pub fn render_stage1_with(frame: &SceneFrame, noise: &NoiseSpec, cfg: &RenderConfig) -> StageOneMaps {
    let (mw, mh) = frame.map_size();
    let views = frame.views();
    let mut heat = Array3::<f32>::zeros((NUM_JOINTS, mh, mw));
    let mut paf = Array4::<f32>::zeros((NUM_JOINTS, 2, mh, mw));
    let mut paf_count = Array3::<u16>::zeros((NUM_JOINTS, mh, mw));
    let mut enc = Array3::<f32>::zeros((ENCODING_DIM, mh, mw));

    let sigma = cfg.heatmap_sigma;
    let reach = (4.0 * sigma).ceil() as i64;
    for view in &views {
        let map_pts: Vec<Vector2<f64>> = view.pixels.iter().map(pixel_to_map).collect();
        for j in Joint::ALL {
            if !view.visible[j.index()] {
                continue;
            }
            let c = map_pts[j.index()];
            let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
            for y in (cy - reach).max(0)..=(cy + reach).min(mh as i64 - 1) {
                for x in (cx - reach).max(0)..=(cx + reach).min(mw as i64 - 1) {
                    let d2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let g = (-d2 / (2.0 * sigma * sigma)).exp() as f32;
                    let cell = &mut heat[(j.index(), y as usize, x as usize)];
                    *cell = cell.max(g);
                }
            }
        }

        let hw = cfg.paf_width / 2.0;
        for j in Joint::ALL.into_iter().skip(1) {
            let p = j.parent().expect("non-root");
            if !(view.visible[j.index()] && view.visible[p.index()]) {
                continue;
            }
            let (a, b) = (map_pts[j.index()], map_pts[p.index()]);
            let d = b - a;
            let len = d.norm();
            if len < 1e-9 {
                continue;
            }
            let u = d / len;
            let x0 = (a.x.min(b.x) - hw).floor().max(0.0) as usize;
            let x1 = ((a.x.max(b.x) + hw).ceil() as i64).min(mw as i64 - 1);
            let y0 = (a.y.min(b.y) - hw).floor().max(0.0) as usize;
            let y1 = ((a.y.max(b.y) + hw).ceil() as i64).min(mh as i64 - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let q = Vector2::new(x as f64, y as f64);
                    if segment_distance(&q, &a, &b) <= hw {
                        paf[(j.index(), 0, y, x)] += u.x as f32;
                        paf[(j.index(), 1, y, x)] += u.y as f32;
                        paf_count[(j.index(), y, x)] += 1;
                    }
                }
            }
        }
    }
    for ((j, y, x), &n) in paf_count.indexed_iter() {
        if n > 1 {
            paf[(j, 0, y, x)] /= n as f32;
            paf[(j, 1, y, x)] /= n as f32;
        }
    }

    // Far subjects first so nearer ones overwrite shared cells.
    let mask = build_mode_mask(&JointSet::standard(), cfg.encoding_mode);
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by(|&a, &b| views[b].depth[0].total_cmp(&views[a].depth[0]));
    for &i in &order {
        write_encodings(&views[i], &mask, cfg.encoding_radius, &mut enc);
    }

    if !noise.is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ (frame.index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        add_noise(heat.iter_mut(), noise.heatmap, &mut rng, true);
        add_noise(paf.iter_mut(), noise.paf, &mut rng, false);
        add_noise(enc.iter_mut(), noise.encoding, &mut rng, false);
    }

    StageOneMaps {
        heatmaps: heat,
        pafs: paf,
        encodings: enc,
        occluded: views.iter().map(|v| v.occluded).collect(),
    }
}

fn write_encodings(view: &PersonView, mask: &SparsityMask, radius: usize, enc: &mut Array3<f32>) {
    let (mh, mw) = (enc.shape()[1] as i64, enc.shape()[2] as i64);
    let l = encode(&view.camera_relative, mask);
    let r = radius as i64;
    for j in Joint::ALL {
        if !view.visible[j.index()] {
            continue;
        }
        let m = pixel_to_map(&view.pixels[j.index()]);
        let (cx, cy) = (m.x.round() as i64, m.y.round() as i64);
        for y in (cy - r).max(0)..=(cy + r).min(mh - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(mw - 1) {
                for &b in &mask.blocks[j.index()] {
                    for a in 0..3 {
                        enc[(3 * b + a, y as usize, x as usize)] = l[j.index()][3 * b + a] as f32;
                    }
                }
            }
        }
        // Foot tips have no detection of their own; the ankle carries them.
    }
}

fn add_noise<'a>(
    it: impl Iterator<Item = &'a mut f32>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    clamp_unit: bool,
) {
    if sigma <= 0.0 {
        return;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    for v in it {
        *v += n.sample(rng) as f32;
        if clamp_unit {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Renders frames in parallel; output order matches input order.
pub fn render_sequence(frames: &[SceneFrame], noise: &NoiseSpec, cfg: &RenderConfig) -> Vec<StageOneMaps> {
    frames
        .par_iter()
        .map(|f| render_stage1_with(f, noise, cfg))
        .collect()
}

// ---------------------------------------------------------------------------
// Appearance field
// ---------------------------------------------------------------------------

/// Anything that can report a (hue, saturation) pair per pixel.
pub trait HsSource {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    fn sample(&self, x: u32, y: u32) -> (f64, f64);
}

fn hash64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

fn unit_noise(seed: u64) -> f64 {
    (hash64(seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Procedural HSV image of a scene frame: each subject's torso bounding box
/// carries its clothing colors, nearer subjects drawn on top, low-saturation
/// background elsewhere.
pub struct AppearanceField {
    width: u32,
    height: u32,
    frame: u64,
    /// (pixel bbox [x0, y0, x1, y1], appearance), nearest first.
    regions: Vec<([f64; 4], Appearance)>,
}

pub const TORSO_JOINTS: [Joint; 7] = [
    Joint::Pelvis,
    Joint::Spine,
    Joint::Neck,
    Joint::LShoulder,
    Joint::RShoulder,
    Joint::LHip,
    Joint::RHip,
];

impl AppearanceField {
    pub fn new(frame: &SceneFrame) -> Self {
        let views = frame.views();
        let mut regions: Vec<(f64, [f64; 4], Appearance)> = views
            .iter()
            .zip(&frame.persons)
            .filter(|(_, p)| !p.hidden)
            .filter(|(v, _)| TORSO_JOINTS.iter().all(|j| v.in_front[j.index()]))
            .map(|(v, p)| {
                let mut bb = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
                for j in TORSO_JOINTS {
                    let px = v.pixels[j.index()];
                    bb[0] = bb[0].min(px.x);
                    bb[1] = bb[1].min(px.y);
                    bb[2] = bb[2].max(px.x);
                    bb[3] = bb[3].max(px.y);
                }
                (v.depth[0], bb, p.appearance)
            })
            .collect();
        regions.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            width: frame.width,
            height: frame.height,
            frame: frame.index as u64,
            regions: regions.into_iter().map(|(_, bb, a)| (bb, a)).collect(),
        }
    }
}

impl HsSource for AppearanceField {
    fn width(&self) -> u32 {
        self.width
    }

    fn height(&self) -> u32 {
        self.height
    }

    fn sample(&self, x: u32, y: u32) -> (f64, f64) {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let key = (self.frame << 40) ^ ((y as u64) << 20) ^ x as u64;
        for (bb, a) in &self.regions {
            if fx >= bb[0] && fx <= bb[2] && fy >= bb[1] && fy <= bb[3] {
                let k = key ^ a.seed;
                let secondary = unit_noise(k ^ 0xA5A5) < 0.25;
                let base = if secondary { a.secondary_hue } else { a.hue };
                let hue = (base + 0.012 * (unit_noise(k ^ 0x1) - 0.5) * 2.0).rem_euclid(1.0);
                let sat = (a.saturation + 0.04 * (unit_noise(k ^ 0x2) - 0.5) * 2.0).clamp(0.0, 1.0);
                return (hue, sat);
            }
        }
        (unit_noise(key ^ 0x77), 0.08 * unit_noise(key ^ 0x78))
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct SceneLineRef<'a> {
    schema_version: u32,
    frame: &'a SceneFrame,
}

#[derive(Deserialize)]
struct SceneLine {
    schema_version: u32,
    frame: SceneFrame,
}

/// One JSON document per frame.
pub fn write_scene_jsonl<W: Write>(mut w: W, frames: &[SceneFrame]) -> Result<()> {
    for f in frames {
        let line = SceneLineRef {
            schema_version: SCENE_SCHEMA_VERSION,
            frame: f,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scene_jsonl<R: std::io::BufRead>(r: R) -> Result<Vec<SceneFrame>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SceneLine = serde_json::from_str(&line)?;
        if parsed.schema_version != SCENE_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported scene schema {}",
                parsed.schema_version
            )));
        }
        out.push(parsed.frame);
    }
    Ok(out)
}

const TENSOR_MAGIC: &[u8; 4] = b"MCT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

/// Flat little-endian tensor: magic, dtype byte, u32 rank, u32 dims, data.
pub fn write_tensor_f32<W: Write>(mut w: W, dims: &[usize], data: &[f32]) -> Result<()> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::InvalidInput("tensor dims do not match data".into()));
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[DType::F32 as u8])?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor_f32<R: Read>(mut r: R) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let mut dt = [0u8; 1];
    r.read_exact(&mut dt)?;
    if dt[0] != DType::F32 as u8 {
        return Err(Error::Format(format!("unsupported dtype {}", dt[0])));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rank = u32::from_le_bytes(b4) as usize;
    if rank > 8 {
        return Err(Error::Format(format!("tensor rank {rank} too large")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut b4)?;
        dims.push(u32::from_le_bytes(b4) as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b4)?;
        data.push(f32::from_le_bytes(b4));
    }
    Ok((dims, data))
}

impl StageOneMaps {
    /// Writes heatmaps, PAFs and encodings as three tensors back to back.
    pub fn write_tensors<W: Write>(&self, mut w: W) -> Result<()> {
        let contiguous = |s: &[usize], it: &mut dyn Iterator<Item = f32>| -> (Vec<usize>, Vec<f32>) {
            (s.to_vec(), it.collect())
        };
        let (d, v) = contiguous(self.heatmaps.shape(), &mut self.heatmaps.iter().copied());
        write_tensor_f32(&mut w, &d, &v)?;
        let (d, v) = contiguous(self.pafs.shape(), &mut self.pafs.iter().copied());
        write_tensor_f32(&mut w, &d, &v)?;
        let (d, v) = contiguous(self.encodings.shape(), &mut self.encodings.iter().copied());
        write_tensor_f32(&mut w, &d, &v)?;
        Ok(())
    }
}
