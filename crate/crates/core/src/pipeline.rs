//! Frame loop tying Stage I maps, association, the pose decoder, identity
//! tracking and skeleton fitting together.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{associate, label_observations, AssociationParams, PersonObservation};
use crate::decoder::PoseDecoder;
use crate::error::Result;
use crate::fitting::track::{FitConfig, FrameFit, Measurement, PoseTrack, RecoveryDecision};
use crate::metrics::{EvalPrediction, EvalTruth};
use crate::simulator::{render_stage1_with, AppearanceField, NoiseSpec, RenderConfig, SceneFrame, StageOneMaps};
use crate::skeleton::{Joint, Pose3D, PoseParams, NUM_JOINTS};
use crate::tracking::{compute_appearance, torso_bbox, Detection, TrackEvent, Tracker, TrackerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub association: AssociationParams,
    pub render: RenderConfig,
    pub noise: NoiseSpec,
    pub fit: FitConfig,
    pub tracker: TrackerConfig,
    /// Run skeleton fitting; off leaves raw decoder output only.
    pub fitting: bool,
    /// Pixel tolerance when labelling detections with simulator identities.
    pub label_tolerance_px: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            association: AssociationParams::default(),
            render: RenderConfig::default(),
            noise: NoiseSpec::none(),
            fit: FitConfig::default(),
            tracker: TrackerConfig::default(),
            fitting: true,
            label_tolerance_px: 12.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub theta: PoseParams,
    /// Metric world positions.
    pub world: Pose3D,
    pub height: f64,
    pub iterations: usize,
    pub recovery_norm: f64,
}

impl From<&FrameFit> for Fitted {
    fn from(f: &FrameFit) -> Self {
        Self {
            theta: f.theta,
            world: f.world,
            height: f.height,
            iterations: f.report.iterations,
            recovery_norm: f.recovery_norm,
        }
    }
}

/// Everything known about one detected person in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub time: f64,
    pub track_id: u64,
    /// Simulator identity of the detection, when it matches one.
    pub gt_id: Option<usize>,
    pub pixels: [Vector2<f64>; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
    /// Decoder output rotated into world axes, root-relative meters.
    pub stage2: Pose3D,
    pub fitted: Option<Fitted>,
}

/// Wall-clock time per stage for one frame, milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1_ms: f64,
    pub association_ms: f64,
    pub decoder_ms: f64,
    pub tracking_ms: f64,
    pub fitting_ms: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

pub struct Pipeline<'a> {
    pub config: PipelineConfig,
    decoder: &'a PoseDecoder,
    pub tracker: Tracker,
    pose_tracks: BTreeMap<u64, PoseTrack>,
}

impl<'a> Pipeline<'a> {
    pub fn new(decoder: &'a PoseDecoder, config: PipelineConfig) -> Self {
        let tracker = Tracker::new(config.tracker.clone());
        Self {
            config,
            decoder,
            tracker,
            pose_tracks: BTreeMap::new(),
        }
    }

    pub fn render(&self, frame: &SceneFrame) -> StageOneMaps {
        render_stage1_with(frame, &self.config.noise, &self.config.render)
    }

    /// Processes a frame from its simulated ground truth.
    pub fn process(&mut self, frame: &SceneFrame) -> Result<(Vec<PoseRecord>, StageTimings)> {
        let t = Instant::now();
        let maps = self.render(frame);
        let stage1_ms = ms(t);
        let (records, mut timings) = self.process_maps(frame, &maps)?;
        timings.stage1_ms = stage1_ms;
        Ok((records, timings))
    }

    /// Processes a frame whose Stage I maps are already available. `frame`
    /// supplies the camera, clock, appearance field and identity labels.
    pub fn process_maps(&mut self, frame: &SceneFrame, maps: &StageOneMaps) -> Result<(Vec<PoseRecord>, StageTimings)> {
        let mut timings = StageTimings::default();
        let t = Instant::now();
        let (_, obs) = associate(maps, &self.config.association);
        timings.association_ms = ms(t);

        let t = Instant::now();
        let p3d_cam = self.decoder.predict(&obs)?;
        timings.decoder_ms = ms(t);

        let t = Instant::now();
        let field = AppearanceField::new(frame);
        let rt = frame.camera.rotation.transpose();
        let detections: Vec<Detection> = obs
            .iter()
            .zip(&p3d_cam)
            .map(|(o, p)| Detection {
                pixels: o.pixels,
                visible: o.visible,
                p3d: p.map(|v| rt * v),
                appearance: torso_bbox(&o.pixels, &o.visible, frame.width, frame.height)
                    .and_then(|b| compute_appearance(&field, &b).ok()),
            })
            .collect();
        let ids = self.tracker.step(frame.index, frame.time, &detections);
        let live: std::collections::BTreeSet<u64> = self.tracker.tracks.iter().map(|t| t.id).collect();
        self.pose_tracks.retain(|id, _| live.contains(id));
        let labels = label_observations(&obs, &frame.views(), self.config.label_tolerance_px);
        let views = frame.views();
        timings.tracking_ms = ms(t);

        let t = Instant::now();
        let fits = if self.config.fitting {
            self.fit_all(frame, &obs, &p3d_cam, &ids)?
        } else {
            vec![None; obs.len()]
        };
        timings.fitting_ms = ms(t);

        for (id, fit) in ids.iter().zip(&fits) {
            if fit.as_ref().is_some_and(|f| f.decision == RecoveryDecision::Reinitialize) {
                self.tracker.reinitialize(frame.index, *id);
                self.pose_tracks.remove(id);
            }
        }

        let records = obs
            .iter()
            .enumerate()
            .map(|(i, o)| PoseRecord {
                frame: frame.index,
                time: frame.time,
                track_id: ids[i],
                gt_id: labels[i].map(|v| views[v].id),
                pixels: o.pixels,
                visible: o.visible,
                stage2: detections[i].p3d,
                fitted: fits[i].as_ref().map(Fitted::from),
            })
            .collect();
        Ok((records, timings))
    }

    /// Fits every detection's track; tracks run in parallel and results come
    /// back in detection order.
    fn fit_all(
        &mut self,
        frame: &SceneFrame,
        obs: &[PersonObservation],
        p3d_cam: &[Pose3D],
        ids: &[u64],
    ) -> Result<Vec<Option<FrameFit>>> {
        let cfg = &self.config.fit;
        let mut work: Vec<(usize, PoseTrack)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (i, self.pose_tracks.remove(id).unwrap_or_else(|| PoseTrack::new(cfg))))
            .collect();
        let cam = &frame.camera;
        let results: Vec<Result<Option<FrameFit>>> = work
            .par_iter_mut()
            .map(|(i, track)| {
                let o = &obs[*i];
                let m = Measurement {
                    time: frame.time,
                    p3d: p3d_cam[*i],
                    p2d: o.pixels,
                    confidence: std::array::from_fn(|j| if o.visible[j] { o.confidence[j].max(1e-3) } else { 0.0 }),
                };
                track.update(&m, cam, cfg)
            })
            .collect();
        for (i, track) in work {
            self.pose_tracks.insert(ids[i], track);
        }
        results.into_iter().collect()
    }

    pub fn events(&self) -> &[TrackEvent] {
        &self.tracker.events
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub records: Vec<PoseRecord>,
    pub events: Vec<TrackEvent>,
    pub timings: Vec<StageTimings>,
}

pub fn run_sequence(frames: &[SceneFrame], decoder: &PoseDecoder, config: &PipelineConfig) -> Result<RunOutput> {
    let mut p = Pipeline::new(decoder, config.clone());
    let mut out = RunOutput::default();
    for f in frames {
        let (r, t) = p.process(f)?;
        out.records.extend(r);
        out.timings.push(t);
    }
    out.events = p.tracker.events;
    Ok(out)
}

/// Ground truth for every subject that is in view with a visible neck.
pub fn ground_truth(frames: &[SceneFrame]) -> Vec<EvalTruth> {
    frames
        .iter()
        .flat_map(|f| {
            let center = f.camera.center();
            f.views()
                .into_iter()
                .zip(&f.persons)
                .filter(|(v, p)| !p.hidden && v.visible[Joint::Neck.index()])
                .map(|(v, _)| EvalTruth {
                    frame: f.index,
                    person: v.id,
                    pose: v.world,
                    camera_distance: (v.world[0] - center).norm(),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    /// Raw decoder output.
    Stage2,
    /// Fitted skeleton.
    Fitted,
}

/// Labelled records as evaluation input. Unlabelled detections are skipped;
/// when two detections share a label the one with more visible joints wins.
pub fn eval_predictions(records: &[PoseRecord], source: PoseSource) -> Vec<EvalPrediction> {
    let mut best: BTreeMap<(usize, usize), (usize, EvalPrediction)> = BTreeMap::new();
    for r in records {
        let Some(gt) = r.gt_id else { continue };
        let pred = match source {
            PoseSource::Stage2 => EvalPrediction {
                frame: r.frame,
                person: gt,
                pose: r.stage2,
                absolute: false,
            },
            PoseSource::Fitted => match &r.fitted {
                Some(f) => EvalPrediction {
                    frame: r.frame,
                    person: gt,
                    pose: f.world,
                    absolute: true,
                },
                None => continue,
            },
        };
        let n = r.visible.iter().filter(|v| **v).count();
        let e = best.entry((r.frame, gt)).or_insert((n, pred.clone()));
        if n > e.0 {
            *e = (n, pred);
        }
    }
    best.into_values().map(|(_, p)| p).collect()
}
