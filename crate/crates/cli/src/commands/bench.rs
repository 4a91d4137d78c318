use std::fmt::Write as _;

use mocap_core::pipeline::{Pipeline, StageTimings};
use mocap_core::simulator::{generate_scene, SceneSpec};
use mocap_core::Result;
use serde::Serialize;

use super::Context;
use crate::output::{opt_num, write_csv, write_json, OUTPUT_SCHEMA_VERSION};

/// Mean milliseconds per frame; absent under `--deterministic`.
#[derive(Serialize)]
struct StageMs {
    stage1: f64,
    association: f64,
    decoder: f64,
    tracking: f64,
    fitting: f64,
}

#[derive(Serialize)]
struct BenchRow {
    persons: usize,
    frames: usize,
    detections: usize,
    fitted: usize,
    solver_iterations: usize,
    ms_per_frame: Option<StageMs>,
}

#[derive(Serialize)]
struct BenchFile {
    schema_version: u32,
    deterministic: bool,
    rows: Vec<BenchRow>,
    /// (decoder + fitting) time at the largest person count over the
    /// smallest; absent under `--deterministic`.
    decoder_fitting_growth: Option<f64>,
}

fn mean(ts: &[StageTimings]) -> StageMs {
    let n = ts.len().max(1) as f64;
    let s = |f: fn(&StageTimings) -> f64| ts.iter().map(f).sum::<f64>() / n;
    StageMs {
        stage1: s(|t| t.stage1_ms),
        association: s(|t| t.association_ms),
        decoder: s(|t| t.decoder_ms),
        tracking: s(|t| t.tracking_ms),
        fitting: s(|t| t.fitting_ms),
    }
}

/// Per-stage timings for a sweep over the number of persons; writes
/// `bench.json` and `bench.csv`.
pub fn bench(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    let decoder = ctx.load_decoder()?;
    let out = ctx.out_dir()?;
    let mut rows = Vec::new();
    for &n in &cfg.bench.persons {
        let frames = generate_scene(&SceneSpec {
            n_persons: n,
            n_frames: cfg.bench.frames,
            paths: Vec::new(),
            scripts: Vec::new(),
            ..cfg.scene.clone()
        })?;
        let mut p = Pipeline::new(&decoder, cfg.pipeline.clone());
        let mut timings = Vec::with_capacity(frames.len());
        let (mut detections, mut fitted, mut iterations) = (0, 0, 0);
        for f in &frames {
            let (records, t) = p.process(f)?;
            detections += records.len();
            for r in &records {
                if let Some(fit) = &r.fitted {
                    fitted += 1;
                    iterations += fit.iterations;
                }
            }
            timings.push(t);
        }
        rows.push(BenchRow {
            persons: n,
            frames: frames.len(),
            detections,
            fitted,
            solver_iterations: iterations,
            ms_per_frame: (!ctx.deterministic).then(|| mean(&timings)),
        });
    }
    let dec_fit = |r: &BenchRow| r.ms_per_frame.as_ref().map(|m| m.decoder + m.fitting);
    let decoder_fitting_growth = match (rows.first().and_then(dec_fit), rows.last().and_then(dec_fit)) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    let file = BenchFile {
        schema_version: OUTPUT_SCHEMA_VERSION,
        deterministic: ctx.deterministic,
        rows,
        decoder_fitting_growth,
    };
    write_json(&out.join("bench.json"), &file)?;
    let header = [
        "persons", "frames", "detections", "fitted", "solver_iterations", "stage1_ms", "association_ms", "decoder_ms", "tracking_ms", "fitting_ms",
    ]
    .map(String::from);
    let csv_rows: Vec<Vec<String>> = file
        .rows
        .iter()
        .map(|r| {
            let m = r.ms_per_frame.as_ref();
            vec![
                r.persons.to_string(),
                r.frames.to_string(),
                r.detections.to_string(),
                r.fitted.to_string(),
                r.solver_iterations.to_string(),
                opt_num(m.map(|m| m.stage1)),
                opt_num(m.map(|m| m.association)),
                opt_num(m.map(|m| m.decoder)),
                opt_num(m.map(|m| m.tracking)),
                opt_num(m.map(|m| m.fitting)),
            ]
        })
        .collect();
    write_csv(&out.join("bench.csv"), &header, &csv_rows)?;

    let mut s = String::new();
    let _ = writeln!(s, "{:>7} {:>10} {:>9} {:>9} {:>9} {:>9} {:>9}", "persons", "detections", "stage1", "assoc", "decoder", "tracking", "fitting");
    for r in &file.rows {
        let cell = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.2}"));
        let m = r.ms_per_frame.as_ref();
        let _ = writeln!(
            s,
            "{:>7} {:>10} {:>9} {:>9} {:>9} {:>9} {:>9}",
            r.persons,
            r.detections,
            cell(m.map(|m| m.stage1)),
            cell(m.map(|m| m.association)),
            cell(m.map(|m| m.decoder)),
            cell(m.map(|m| m.tracking)),
            cell(m.map(|m| m.fitting)),
        );
    }
    if let Some(g) = file.decoder_fitting_growth {
        let _ = writeln!(s, "decoder + fitting growth, first to last row: {g:.2}x");
    }
    if ctx.deterministic {
        let _ = writeln!(s, "wall-clock timings withheld under --deterministic");
    }
    Ok(s)
}
