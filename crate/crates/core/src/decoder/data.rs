use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{associate, label_observations, AssociationParams};
use crate::error::Result;
use crate::simulator::{generate_scene, render_stage1_with, NoiseSpec, RenderConfig, SceneSpec};
use crate::skeleton::{Pose3D, NUM_JOINTS};

/// One Stage II training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Raw `S_k`, `J × (3 + 3J)` row-major.
    pub input: Vec<f64>,
    /// Camera-aligned root-relative pose, meters.
    pub target: Pose3D,
    pub visible: [bool; NUM_JOINTS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub sequences: usize,
    pub frames: usize,
    /// Keep every `stride`-th frame of each sequence.
    pub stride: usize,
    pub min_persons: usize,
    pub max_persons: usize,
    /// Range of motion amplitudes drawn per sequence.
    pub amplitude: [f64; 2],
    pub noise: f64,
    pub seed: u64,
    /// Template for image size and camera.
    pub scene: SceneSpec,
    pub render: RenderConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            sequences: 100,
            frames: 150,
            stride: 5,
            min_persons: 1,
            max_persons: 4,
            amplitude: [0.5, 2.0],
            noise: 0.02,
            seed: 0,
            scene: SceneSpec::default(),
            render: RenderConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn image_diagonal(&self) -> f64 {
        (self.scene.width as f64).hypot(self.scene.height as f64)
    }
}

/// Simulated scenes pushed through rendering and association. Each grouped
/// person whose joints match a subject becomes a sample; unmatched groups
/// are skipped. Sequences are generated in parallel and concatenated in
/// order.
pub fn generate_samples(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    let per_seq: Result<Vec<Vec<Sample>>> = (0..spec.sequences)
        .into_par_iter()
        .map(|i| {
            let seq_seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
            let lo = spec.min_persons.max(1);
            let hi = spec.max_persons.max(lo);
            let scene = SceneSpec {
                n_persons: rng.random_range(lo..=hi),
                n_frames: spec.frames,
                seed: seq_seed,
                motion_amplitude: rng.random_range(spec.amplitude[0]..=spec.amplitude[1]),
                walking: rng.random_bool(0.7),
                paths: Vec::new(),
                scripts: Vec::new(),
                ..spec.scene.clone()
            };
            let frames = generate_scene(&scene)?;
            let noise = NoiseSpec::uniform(spec.noise, seq_seed);
            let params = AssociationParams::default();
            let mut out = Vec::new();
            for f in frames.iter().step_by(spec.stride.max(1)) {
                let maps = render_stage1_with(f, &noise, &spec.render);
                let views = f.views();
                let (_, obs) = associate(&maps, &params);
                let labels = label_observations(&obs, &views, 12.0);
                for (o, l) in obs.iter().zip(labels) {
                    let Some(k) = l else { continue };
                    out.push(Sample {
                        input: o.input_matrix(),
                        target: views[k].camera_relative,
                        visible: o.visible,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    Ok(per_seq?.into_iter().flatten().collect())
}
