use std::fs::File;
use std::io::{BufWriter, Write};

use mocap_core::metrics::EvalTruth;
use mocap_core::pipeline::ground_truth;
use mocap_core::simulator::{generate_scene, render_sequence, write_scene_jsonl};
use mocap_core::Result;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::output::{write_json, OUTPUT_SCHEMA_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub truth: Vec<EvalTruth>,
}

/// Writes `scene.jsonl`, `ground_truth.json` and optionally `maps.bin`
/// (three tensors per frame: heatmaps, PAFs, encodings).
pub fn simulate(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    let out = ctx.out_dir()?;
    let frames = generate_scene(&cfg.scene)?;
    let mut w = BufWriter::new(File::create(out.join("scene.jsonl"))?);
    write_scene_jsonl(&mut w, &frames)?;
    w.flush()?;
    let truth = ground_truth(&frames);
    let n_truth = truth.len();
    write_json(
        &out.join("ground_truth.json"),
        &TruthFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            truth,
        },
    )?;
    if cfg.simulate.write_maps {
        let maps = render_sequence(&frames, &cfg.pipeline.noise, &cfg.pipeline.render);
        let mut w = BufWriter::new(File::create(out.join("maps.bin"))?);
        for m in &maps {
            m.write_tensors(&mut w)?;
        }
        w.flush()?;
    }
    Ok(format!(
        "simulated {} frames, {} persons, {} ground-truth poses -> {}",
        frames.len(),
        cfg.scene.n_persons,
        n_truth,
        out.display()
    ))
}
