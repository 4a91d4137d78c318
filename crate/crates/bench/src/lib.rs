//! Shared fixtures for the criterion benchmarks.

use mocap_core::decoder::{generate_samples, train, DatasetSpec, PoseDecoder, TrainConfig};
use mocap_core::simulator::{generate_scene, SceneFrame, SceneSpec};
use mocap_core::Result;

/// A briefly trained decoder. Inference cost depends only on the layer
/// widths, so quality is irrelevant here.
pub fn quick_decoder() -> Result<PoseDecoder> {
    let spec = DatasetSpec { sequences: 4, frames: 20, ..DatasetSpec::default() };
    let samples = generate_samples(&spec)?;
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    Ok(train(&samples, spec.image_diagonal(), &cfg)?.0)
}

pub fn scene(persons: usize, frames: usize) -> Result<Vec<SceneFrame>> {
    generate_scene(&SceneSpec { n_persons: persons, n_frames: frames, seed: 7, ..SceneSpec::default() })
}
