//! Stage II: a fully connected network mapping the per-person feature
//! matrix `S_k` to a root-relative 3D pose.

pub mod data;
pub mod io;
pub mod mlp;

use nalgebra::Vector3;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::{PersonObservation, INPUT_DIM, ROW_DIM};
use crate::error::{Error, Result};
use crate::skeleton::{Joint, Pose3D, NUM_JOINTS};

pub use data::{generate_samples, DatasetSpec, Sample};
pub use mlp::{smooth_l1, smooth_l1_grad, Adam, Dense, Mlp, Real};

pub const OUTPUT_DIM: usize = 3 * NUM_JOINTS;
pub const HIDDEN_WIDTHS: [usize; 4] = [512, 512, 256, 128];
/// Network outputs are decimeters.
pub const OUTPUT_SCALE: f64 = 10.0;
pub const SMOOTH_L1_DELTA: f64 = 1.0;

pub fn default_widths() -> Vec<usize> {
    let mut w = vec![INPUT_DIM];
    w.extend(HIDDEN_WIDTHS);
    w.push(OUTPUT_DIM);
    w
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    Full,
    /// Encoding channels zeroed; 2D position and confidence only.
    TwoDOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderMeta {
    /// Divisor for the neck-relative 2D entries, pixels.
    pub image_diagonal: f64,
    pub input_mode: InputMode,
}

/// A trained network together with its input standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseDecoder {
    pub mlp: Mlp<f32>,
    pub meta: DecoderMeta,
}

/// Standardizes a raw `S_k` in place: 2D divided by the image diagonal and,
/// in 2D-only mode, encoding channels cleared.
pub fn standardize(raw: &[f64], meta: &DecoderMeta, out: &mut [f32]) {
    debug_assert_eq!(raw.len(), INPUT_DIM);
    for j in 0..NUM_JOINTS {
        let r = &raw[j * ROW_DIM..(j + 1) * ROW_DIM];
        let o = &mut out[j * ROW_DIM..(j + 1) * ROW_DIM];
        o[0] = (r[0] / meta.image_diagonal) as f32;
        o[1] = (r[1] / meta.image_diagonal) as f32;
        o[2] = r[2] as f32;
        match meta.input_mode {
            InputMode::Full => {
                for (a, b) in o[3..].iter_mut().zip(&r[3..]) {
                    *a = *b as f32;
                }
            }
            InputMode::TwoDOnly => o[3..].fill(0.0),
        }
    }
}

fn output_to_pose(row: ndarray::ArrayView1<f32>) -> Pose3D {
    let mut p = [Vector3::zeros(); NUM_JOINTS];
    for (j, v) in p.iter_mut().enumerate().skip(1) {
        *v = Vector3::new(row[3 * j] as f64, row[3 * j + 1] as f64, row[3 * j + 2] as f64) / OUTPUT_SCALE;
    }
    p
}

impl PoseDecoder {
    pub fn new(mlp: Mlp<f32>, meta: DecoderMeta) -> Result<Self> {
        if mlp.input_dim() != INPUT_DIM {
            return Err(Error::WidthMismatch {
                expected: INPUT_DIM,
                got: mlp.input_dim(),
            });
        }
        if mlp.output_dim() != OUTPUT_DIM {
            return Err(Error::WidthMismatch {
                expected: OUTPUT_DIM,
                got: mlp.output_dim(),
            });
        }
        Ok(Self { mlp, meta })
    }

    /// Root-relative poses (meters, root at the origin) for raw `S_k` rows.
    pub fn predict_raw(&self, inputs: &[Vec<f64>]) -> Result<Vec<Pose3D>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut x = Array2::<f32>::zeros((inputs.len(), INPUT_DIM));
        for (i, raw) in inputs.iter().enumerate() {
            if raw.len() != INPUT_DIM {
                return Err(Error::WidthMismatch {
                    expected: INPUT_DIM,
                    got: raw.len(),
                });
            }
            standardize(raw, &self.meta, x.row_mut(i).as_slice_mut().expect("contiguous"));
        }
        let y = self.mlp.forward(x.view())?;
        Ok(y.axis_iter(Axis(0)).map(output_to_pose).collect())
    }

    pub fn predict(&self, observations: &[PersonObservation]) -> Result<Vec<Pose3D>> {
        let raw: Vec<Vec<f64>> = observations.iter().map(|o| o.input_matrix()).collect();
        self.predict_raw(&raw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of hiding each non-neck joint row per sample and epoch.
    pub dropout: f64,
    /// Epochs without validation improvement before the rate is halved.
    pub patience: usize,
    /// Epochs without improvement before training stops.
    pub early_stop: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub input_mode: InputMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            widths: default_widths(),
            epochs: 40,
            batch_size: 256,
            learning_rate: 1e-3,
            dropout: 0.3,
            patience: 2,
            early_stop: 5,
            val_fraction: 0.1,
            seed: 0,
            input_mode: InputMode::Full,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_mpjpe_mm: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mpjpe_mm: f64,
}

/// Zeroes every row except the neck with probability `p`.
fn drop_rows(row: &mut [f32], p: f64, rng: &mut ChaCha8Rng) {
    let neck = Joint::Neck.index();
    for j in 0..NUM_JOINTS {
        if j != neck && rng.random::<f64>() < p {
            row[j * ROW_DIM..(j + 1) * ROW_DIM].fill(0.0);
        }
    }
}

fn build_inputs(samples: &[&Sample], meta: &DecoderMeta) -> (Array2<f32>, Array2<f32>) {
    let mut x = Array2::<f32>::zeros((samples.len(), INPUT_DIM));
    let mut y = Array2::<f32>::zeros((samples.len(), OUTPUT_DIM));
    for (i, s) in samples.iter().enumerate() {
        standardize(&s.input, meta, x.row_mut(i).as_slice_mut().expect("contiguous"));
        for j in 0..NUM_JOINTS {
            for a in 0..3 {
                y[(i, 3 * j + a)] = (s.target[j][a] * OUTPUT_SCALE) as f32;
            }
        }
    }
    (x, y)
}

/// Mean per-joint position error in millimeters between network outputs in
/// decimeters. Root rows are ignored (forced to zero at inference).
fn mpjpe_dm(pred: ArrayView2<f32>, target: ArrayView2<f32>) -> f64 {
    let mut sum = 0.0;
    for (p, t) in pred.axis_iter(Axis(0)).zip(target.axis_iter(Axis(0))) {
        for j in 0..NUM_JOINTS {
            let d = if j == 0 {
                0.0
            } else {
                (0..3)
                    .map(|a| (p[3 * j + a] as f64 - t[3 * j + a] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            sum += d;
        }
    }
    sum / (pred.nrows() * NUM_JOINTS).max(1) as f64 * 100.0
}

/// Trains a fresh network. Validation rows get one fixed dropout draw so
/// the early-stopping signal matches dropout-time evaluation.
pub fn train(samples: &[Sample], image_diagonal: f64, cfg: &TrainConfig) -> Result<(PoseDecoder, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if cfg.widths.first() != Some(&INPUT_DIM) || cfg.widths.last() != Some(&OUTPUT_DIM) {
        return Err(Error::Config(format!(
            "network widths must start at {INPUT_DIM} and end at {OUTPUT_DIM}"
        )));
    }
    let meta = DecoderMeta {
        image_diagonal,
        input_mode: cfg.input_mode,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if samples.len() < 10 {
        0
    } else {
        ((samples.len() as f64 * cfg.val_fraction).round() as usize).min(samples.len() - 1)
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_refs: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val_refs: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let (train_x, train_y) = build_inputs(&train_refs, &meta);
    let (mut val_x, val_y) = build_inputs(&val_refs, &meta);
    for mut row in val_x.axis_iter_mut(Axis(0)) {
        drop_rows(row.as_slice_mut().expect("contiguous"), cfg.dropout, &mut rng);
    }

    let mut model = Mlp::<f32>::new(&cfg.widths, cfg.seed ^ 0x5EED);
    let mut opt = Adam::new(&model, cfg.learning_rate);
    let mut report = TrainReport {
        best_val_mpjpe_mm: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best = model.clone();
    let mut since_best = 0usize;
    let mut since_decay = 0usize;
    let n = train_x.nrows();
    let bs = cfg.batch_size.max(1);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut bx = Array2::<f32>::zeros((bs, INPUT_DIM));
    let mut by = Array2::<f32>::zeros((bs, OUTPUT_DIM));

    for epoch in 0..cfg.epochs {
        perm.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in perm.chunks(bs) {
            let m = chunk.len();
            for (r, &i) in chunk.iter().enumerate() {
                bx.row_mut(r).assign(&train_x.row(i));
                by.row_mut(r).assign(&train_y.row(i));
                drop_rows(bx.row_mut(r).as_slice_mut().expect("contiguous"), cfg.dropout, &mut rng);
            }
            let xb = bx.slice(s![..m, ..]);
            let yb = by.slice(s![..m, ..]);
            let trace = model.forward_trace(xb)?;
            let loss = smooth_l1(trace.output().view(), yb, SMOOTH_L1_DELTA);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss {loss} at epoch {epoch}")));
            }
            let d = smooth_l1_grad(trace.output().view(), yb, SMOOTH_L1_DELTA);
            let (g, _) = model.backward(&trace, &d);
            opt.step(&mut model, &g);
            loss_sum += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::Divergence(format!("non-finite weights at epoch {epoch}")));
        }
        report.train_loss.push(loss_sum / batches.max(1) as f64);
        report.learning_rate.push(opt.lr);

        let val = if n_val > 0 {
            mpjpe_dm(model.forward(val_x.view())?.view(), val_y.view())
        } else {
            mpjpe_dm(model.forward(train_x.view())?.view(), train_y.view())
        };
        report.val_mpjpe_mm.push(val);
        if val < report.best_val_mpjpe_mm {
            report.best_val_mpjpe_mm = val;
            report.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= cfg.early_stop {
                break;
            }
            if since_decay >= cfg.patience {
                opt.lr *= 0.5;
                since_decay = 0;
            }
        }
    }
    Ok((PoseDecoder::new(best, meta)?, report))
}

/// Mean per-joint position error (mm) over samples, with optional row
/// dropout drawn from `seed`.
pub fn evaluate(decoder: &PoseDecoder, samples: &[Sample], dropout: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (mut x, y) = build_inputs(&refs, &decoder.meta);
    if dropout > 0.0 {
        for mut row in x.axis_iter_mut(Axis(0)) {
            drop_rows(row.as_slice_mut().expect("contiguous"), dropout, &mut rng);
        }
    }
    let pred = decoder.mlp.forward(x.view())?;
    Ok(mpjpe_dm(pred.view(), y.view()))
}

/// Per-joint mean error (mm) with the same dropout convention as
/// [`evaluate`].
pub fn per_joint_error(decoder: &PoseDecoder, samples: &[Sample], dropout: f64, seed: u64) -> Result<[f64; NUM_JOINTS]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (mut x, y) = build_inputs(&refs, &decoder.meta);
    if dropout > 0.0 {
        for mut row in x.axis_iter_mut(Axis(0)) {
            drop_rows(row.as_slice_mut().expect("contiguous"), dropout, &mut rng);
        }
    }
    let pred = decoder.mlp.forward(x.view())?;
    let mut err = [0.0; NUM_JOINTS];
    for (p, t) in pred.axis_iter(Axis(0)).zip(y.axis_iter(Axis(0))) {
        for (j, e) in err.iter_mut().enumerate().skip(1) {
            *e += (0..3)
                .map(|a| (p[3 * j + a] as f64 - t[3 * j + a] as f64).powi(2))
                .sum::<f64>()
                .sqrt()
                * 100.0;
        }
    }
    for e in err.iter_mut() {
        *e /= samples.len().max(1) as f64;
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set(n: usize, seed: u64) -> Vec<Sample> {
        generate_samples(&DatasetSpec {
            sequences: n,
            frames: 10,
            stride: 5,
            seed,
            ..DatasetSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_network_predicts_zero_pose() {
        let d = PoseDecoder::new(
            Mlp::zeros(&default_widths()),
            DecoderMeta {
                image_diagonal: 600.0,
                input_mode: InputMode::Full,
            },
        )
        .unwrap();
        let p = d.predict_raw(&[vec![0.3; INPUT_DIM]]).unwrap();
        assert!(p[0].iter().all(|v| v.norm() == 0.0));
        assert!(d.predict_raw(&[vec![0.0; 10]]).is_err());
    }

    #[test]
    fn root_is_forced_to_zero() {
        let mut m = Mlp::<f32>::new(&default_widths(), 1);
        m.layers.last_mut().unwrap().b.fill(1.0);
        let d = PoseDecoder::new(
            m,
            DecoderMeta {
                image_diagonal: 600.0,
                input_mode: InputMode::Full,
            },
        )
        .unwrap();
        let p = d.predict_raw(&[vec![0.1; INPUT_DIM]]).unwrap();
        assert_eq!(p[0][0], Vector3::zeros());
        assert!(p[0][1].norm() > 0.0);
    }

    #[test]
    fn two_d_only_mode_ignores_encodings() {
        let meta = DecoderMeta {
            image_diagonal: 600.0,
            input_mode: InputMode::TwoDOnly,
        };
        let mut raw = vec![0.0; INPUT_DIM];
        raw[0] = 60.0;
        raw[2] = 0.9;
        raw[5] = 0.4;
        let mut out = vec![0.0; INPUT_DIM];
        standardize(&raw, &meta, &mut out);
        assert!((out[0] - 0.1).abs() < 1e-7);
        assert_eq!(out[2], 0.9);
        assert_eq!(out[5], 0.0);
    }

    #[test]
    fn single_sample_is_memorized() {
        let samples = tiny_set(1, 1);
        let one = vec![samples[0].clone()];
        let cfg = TrainConfig {
            widths: vec![INPUT_DIM, 64, 64, OUTPUT_DIM],
            epochs: 300,
            dropout: 0.0,
            early_stop: 1000,
            patience: 1000,
            ..TrainConfig::default()
        };
        let (dec, report) = train(&one, 600.0, &cfg).unwrap();
        assert!(report.train_loss.last().unwrap() < &1e-4, "{:?}", report.train_loss.last());
        let err = evaluate(&dec, &one, 0.0, 0).unwrap();
        assert!(err < 2.0, "memorization error {err} mm");
    }

    #[test]
    fn training_is_deterministic() {
        let samples = tiny_set(3, 2);
        let cfg = TrainConfig {
            widths: vec![INPUT_DIM, 32, OUTPUT_DIM],
            epochs: 3,
            ..TrainConfig::default()
        };
        let (a, ra) = train(&samples, 600.0, &cfg).unwrap();
        let (b, rb) = train(&samples, 600.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn bad_widths_are_a_config_error() {
        let samples = tiny_set(1, 3);
        let cfg = TrainConfig {
            widths: vec![10, 5],
            ..TrainConfig::default()
        };
        assert!(matches!(train(&samples, 600.0, &cfg), Err(Error::Config(_))));
    }
}
