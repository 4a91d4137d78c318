use mocap_core::metrics::EvalPrediction;
use mocap_core::pipeline::{eval_predictions, ground_truth, run_sequence, PoseRecord, PoseSource};
use mocap_core::simulator::{generate_scene, SceneFrame, MAP_STRIDE};
use mocap_core::skeleton::{NUM_DOF, NUM_JOINTS};
use mocap_core::{Error, Result};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::simulate::TruthFile;
use super::Context;
use crate::output::{num, write_csv, write_json, write_jsonl, OUTPUT_SCHEMA_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub schema_version: u32,
    pub source: PoseSource,
    pub predictions: Vec<EvalPrediction>,
}

#[derive(Serialize)]
struct PosesFile<'a> {
    schema_version: u32,
    records: &'a [PoseRecord],
}

#[derive(Serialize)]
struct JointAngles {
    frame: usize,
    time: f64,
    track_id: u64,
    gt_id: Option<usize>,
    theta: Vec<f64>,
    /// Pelvis position in world coordinates, meters.
    global_position: [f64; 3],
    height: f64,
}

#[derive(Serialize)]
struct OverlayPerson {
    track_id: u64,
    pixels: Vec<[f64; 2]>,
    visible: Vec<bool>,
    /// Fitted skeleton projected into the image, when available.
    reprojected: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct OverlayFrame {
    frame: usize,
    persons: Vec<OverlayPerson>,
}

#[derive(Serialize)]
struct OverlayFile {
    schema_version: u32,
    width: u32,
    height: u32,
    /// Spacing of the Stage I map grid in pixels.
    grid_stride: f64,
    /// Parent index per joint for drawing bones.
    parents: Vec<Option<usize>>,
    frames: Vec<OverlayFrame>,
}

fn overlay(frames: &[SceneFrame], records: &[PoseRecord]) -> OverlayFile {
    let parents = (0..NUM_JOINTS)
        .map(|j| {
            mocap_core::skeleton::Joint::from_index(j)
                .and_then(|jt| jt.parent())
                .map(|p| p.index())
        })
        .collect();
    let mut out: Vec<OverlayFrame> = frames
        .iter()
        .map(|f| OverlayFrame {
            frame: f.index,
            persons: Vec::new(),
        })
        .collect();
    for r in records {
        let cam = &frames[r.frame].camera;
        let reprojected = r.fitted.as_ref().map(|f| {
            f.world
                .iter()
                .map(|p| cam.project(p).map(|pr| pr.pixel).unwrap_or(Vector2::new(f64::NAN, f64::NAN)))
                .map(|p| [p.x, p.y])
                .collect()
        });
        out[r.frame].persons.push(OverlayPerson {
            track_id: r.track_id,
            pixels: r.pixels.iter().map(|p| [p.x, p.y]).collect(),
            visible: r.visible.to_vec(),
            reprojected,
        });
    }
    OverlayFile {
        schema_version: OUTPUT_SCHEMA_VERSION,
        width: frames.first().map_or(0, |f| f.width),
        height: frames.first().map_or(0, |f| f.height),
        grid_stride: MAP_STRIDE,
        parents,
        frames: out,
    }
}

/// Runs the full pipeline on a simulated scene and writes poses, joint
/// angles, track events, overlay data, predictions and ground truth.
pub fn run(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    let decoder = ctx.load_decoder()?;
    let out = ctx.out_dir()?;
    if cfg.eval.source == PoseSource::Fitted && !cfg.pipeline.fitting {
        return Err(Error::Config("eval.source is \"fitted\" but pipeline.fitting is off".into()));
    }
    let frames = generate_scene(&cfg.scene)?;
    let result = run_sequence(&frames, &decoder, &cfg.pipeline)?;

    write_json(
        &out.join("poses.json"),
        &PosesFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            records: &result.records,
        },
    )?;

    let angles: Vec<JointAngles> = result
        .records
        .iter()
        .filter_map(|r| {
            r.fitted.as_ref().map(|f| JointAngles {
                frame: r.frame,
                time: r.time,
                track_id: r.track_id,
                gt_id: r.gt_id,
                theta: f.theta.0.to_vec(),
                global_position: [f.world[0].x, f.world[0].y, f.world[0].z],
                height: f.height,
            })
        })
        .collect();
    let mut header: Vec<String> = ["frame", "time", "track_id", "gt_id"].map(String::from).to_vec();
    header.extend((0..NUM_DOF).map(|d| format!("dof{d}")));
    header.extend(["x", "y", "z", "height"].map(String::from));
    let rows: Vec<Vec<String>> = angles
        .iter()
        .map(|a| {
            let mut row = vec![
                a.frame.to_string(),
                num(a.time),
                a.track_id.to_string(),
                a.gt_id.map(|g| g.to_string()).unwrap_or_default(),
            ];
            row.extend(a.theta.iter().map(|v| num(*v)));
            row.extend(a.global_position.iter().map(|v| num(*v)));
            row.push(num(a.height));
            row
        })
        .collect();
    write_csv(&out.join("joint_angles.csv"), &header, &rows)?;
    write_json(
        &out.join("joint_angles.json"),
        &serde_json::json!({ "schema_version": OUTPUT_SCHEMA_VERSION, "dof": NUM_DOF, "poses": angles }),
    )?;

    write_jsonl(&out.join("track_events.jsonl"), "track_events", &result.events)?;
    write_json(&out.join("overlay.json"), &overlay(&frames, &result.records))?;

    let predictions = eval_predictions(&result.records, cfg.eval.source);
    let n_pred = predictions.len();
    write_json(
        &out.join("predictions.json"),
        &PredictionFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            source: cfg.eval.source,
            predictions,
        },
    )?;
    if cfg.eval.source != PoseSource::Stage2 {
        write_json(
            &out.join("predictions_stage2.json"),
            &PredictionFile {
                schema_version: OUTPUT_SCHEMA_VERSION,
                source: PoseSource::Stage2,
                predictions: eval_predictions(&result.records, PoseSource::Stage2),
            },
        )?;
    }
    write_json(
        &out.join("ground_truth.json"),
        &TruthFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            truth: ground_truth(&frames),
        },
    )?;

    if !ctx.deterministic {
        let header = ["frame", "stage1_ms", "association_ms", "decoder_ms", "tracking_ms", "fitting_ms"].map(String::from);
        let rows: Vec<Vec<String>> = result
            .timings
            .iter()
            .enumerate()
            .map(|(i, t)| {
                vec![
                    i.to_string(),
                    num(t.stage1_ms),
                    num(t.association_ms),
                    num(t.decoder_ms),
                    num(t.tracking_ms),
                    num(t.fitting_ms),
                ]
            })
            .collect();
        write_csv(&out.join("timings.csv"), &header, &rows)?;
    }

    let tracks: std::collections::BTreeSet<u64> = result.records.iter().map(|r| r.track_id).collect();
    Ok(format!(
        "processed {} frames: {} detections, {} tracks, {} fitted poses, {} predictions -> {}",
        frames.len(),
        result.records.len(),
        tracks.len(),
        angles.len(),
        n_pred,
        out.display()
    ))
}
