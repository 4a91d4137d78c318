//! Run configuration: one JSON document for every subcommand. Unknown keys
//! are rejected and the whole document is validated before any work starts.

use std::path::{Path, PathBuf};

use mocap_core::decoder::{DatasetSpec, TrainConfig};
use mocap_core::metrics::EvalMode;
use mocap_core::pipeline::{PipelineConfig, PoseSource};
use mocap_core::simulator::SceneSpec;
use mocap_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct SimulateConfig {
    /// Also write the rendered Stage I maps as flat tensors.
    pub write_maps: bool,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    /// Held-out sequences, drawn from a seed range disjoint from training.
    pub holdout_sequences: usize,
    /// Joint dropout applied when scoring the held-out set.
    pub holdout_dropout: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec {
                sequences: 400,
                seed: 1,
                ..DatasetSpec::default()
            },
            train: TrainConfig::default(),
            holdout_sequences: 60,
            holdout_dropout: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Defaults to `<out>/predictions.json`.
    pub predictions: Option<PathBuf>,
    /// Defaults to `<out>/ground_truth.json`.
    pub truth: Option<PathBuf>,
    pub mode: EvalMode,
    /// Which pose `run` writes to `predictions.json`.
    pub source: PoseSource,
    /// Optional pass/fail checks reported next to the metrics.
    pub max_mpjpe_mm: Option<f64>,
    pub min_pck150: Option<f64>,
    pub max_root_error_pct: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            predictions: None,
            truth: None,
            mode: EvalMode::All,
            source: PoseSource::Fitted,
            max_mpjpe_mm: None,
            min_pck150: None,
            max_root_error_pct: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub width: usize,
    pub height: usize,
    pub batches: Vec<usize>,
    /// Allocator page size for the paged memory column.
    pub page_bytes: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            width: 512,
            height: 320,
            batches: vec![1, 32],
            page_bytes: 2 << 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub frames: usize,
    pub persons: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            frames: 30,
            persons: (1..=10).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// When set, overrides every seed below.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Decoder model; defaults to `<out>/decoder.bin`.
    pub model: Option<PathBuf>,
    pub scene: SceneSpec,
    pub pipeline: PipelineConfig,
    pub simulate: SimulateConfig,
    pub training: TrainSection,
    pub eval: EvalSection,
    pub net: NetSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: None,
            out: None,
            model: None,
            scene: SceneSpec::default(),
            pipeline: PipelineConfig::default(),
            simulate: SimulateConfig::default(),
            training: TrainSection::default(),
            eval: EvalSection::default(),
            net: NetSection::default(),
            bench: BenchSection::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides and propagates the master seed.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if out.is_some() {
            self.out = out;
        }
        if let Some(s) = self.seed {
            self.scene.seed = s;
            self.pipeline.noise.seed = s.wrapping_add(1);
            self.training.dataset.seed = s.wrapping_add(2);
            self.training.train.seed = s.wrapping_add(3);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        check(
            self.schema_version == CONFIG_SCHEMA_VERSION,
            &format!("unsupported config schema {}", self.schema_version),
        )?;
        check(self.scene.n_persons >= 1 && self.scene.n_frames >= 1, "scene needs at least one person and one frame")?;
        check(self.scene.fps > 0.0, "scene.fps must be positive")?;
        let n = &self.pipeline.noise;
        check(n.heatmap >= 0.0 && n.paf >= 0.0 && n.encoding >= 0.0, "noise levels must be non-negative")?;
        check(self.pipeline.fit.weights.is_valid(), "fitting weights must be finite and non-negative")?;
        check(self.pipeline.fit.limits.is_valid(), "joint limits must satisfy min < max")?;
        check(self.pipeline.tracker.threshold > 0.0, "tracker threshold must be positive")?;
        let t = &self.training;
        check(t.dataset.sequences >= 1 && t.dataset.frames >= 1, "training dataset is empty")?;
        check(t.dataset.min_persons >= 1 && t.dataset.min_persons <= t.dataset.max_persons, "training person range is empty")?;
        check(t.train.epochs >= 1 && t.train.batch_size >= 1, "training needs epochs and a batch size")?;
        check(t.train.learning_rate > 0.0, "learning rate must be positive")?;
        check((0.0..1.0).contains(&t.train.dropout), "training dropout must lie in [0, 1)")?;
        check((0.0..1.0).contains(&t.holdout_dropout), "holdout dropout must lie in [0, 1)")?;
        check(!self.net.batches.is_empty() && self.net.batches.iter().all(|&b| b >= 1), "net.batches must be positive")?;
        check(
            self.net.width.is_multiple_of(16) && self.net.height.is_multiple_of(16) && self.net.width > 0 && self.net.height > 0,
            "net input size must be a positive multiple of 16",
        )?;
        check(self.bench.frames >= 1, "bench.frames must be positive")?;
        check(!self.bench.persons.is_empty() && self.bench.persons.iter().all(|&n| n >= 1), "bench.persons must be positive")?;
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir().join("decoder.bin"))
    }
}
