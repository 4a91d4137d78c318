//! Pose accuracy and stability metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Joint, Pose3D, NUM_JOINTS};

pub const PCK_THRESHOLD_MM: f64 = 150.0;
/// AUC thresholds: 0, 5, …, 150 mm.
pub const AUC_STEP_MM: f64 = 5.0;

fn root_relative(p: &Pose3D) -> Pose3D {
    let r = p[Joint::ROOT.index()];
    p.map(|q| q - r)
}

/// Per-joint root-relative errors in millimeters.
pub fn joint_errors_mm(pred: &Pose3D, truth: &Pose3D) -> [f64; NUM_JOINTS] {
    let (a, b) = (root_relative(pred), root_relative(truth));
    std::array::from_fn(|j| (a[j] - b[j]).norm() * 1000.0)
}

pub fn mpjpe_mm(pred: &Pose3D, truth: &Pose3D) -> f64 {
    joint_errors_mm(pred, truth).iter().sum::<f64>() / NUM_JOINTS as f64
}

/// Percentage of joints within `threshold_mm`.
pub fn pck(errors: &[f64], threshold_mm: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    100.0 * errors.iter().filter(|e| **e <= threshold_mm).count() as f64 / errors.len() as f64
}

/// Mean PCK over thresholds 0..=150 mm in 5 mm steps.
pub fn auc(errors: &[f64]) -> f64 {
    let n = (PCK_THRESHOLD_MM / AUC_STEP_MM) as usize;
    (0..=n).map(|k| pck(errors, k as f64 * AUC_STEP_MM)).sum::<f64>() / (n + 1) as f64
}

/// Mean norm of the second difference of root-relative joint positions,
/// millimeters per frame², over runs of consecutive frames.
pub fn jitter_mm(frames: &[(usize, Pose3D)]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for w in frames.windows(3) {
        if w[1].0 != w[0].0 + 1 || w[2].0 != w[1].0 + 1 {
            continue;
        }
        let (a, b, c) = (root_relative(&w[0].1), root_relative(&w[1].1), root_relative(&w[2].1));
        for j in 0..NUM_JOINTS {
            sum += (c[j] - b[j] * 2.0 + a[j]).norm() * 1000.0;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean absolute second difference of a DOF sequence, radians per frame².
pub fn dof_jitter(frames: &[(usize, Vec<f64>)]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for w in frames.windows(3) {
        if w[1].0 != w[0].0 + 1 || w[2].0 != w[1].0 + 1 {
            continue;
        }
        for d in 0..w[0].1.len() {
            sum += (w[2].1[d] - 2.0 * w[1].1[d] + w[0].1[d]).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Undetected ground-truth poses count as every joint failing.
    #[default]
    All,
    /// Only poses with a prediction are scored.
    Matched,
}

/// One predicted pose tied to a ground-truth subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPrediction {
    pub frame: usize,
    pub person: usize,
    /// Metric world positions; root-relative metrics ignore the offset.
    pub pose: Pose3D,
    /// Whether `pose` carries a meaningful absolute position.
    pub absolute: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTruth {
    pub frame: usize,
    pub person: usize,
    pub pose: Pose3D,
    /// Camera center distance to the root, meters.
    pub camera_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub poses: usize,
    pub missed: usize,
    pub pck150: f64,
    pub auc: f64,
    pub mpjpe_mm: f64,
    pub root_error_mm: Option<f64>,
    /// Root error divided by camera distance, percent.
    pub root_error_pct: Option<f64>,
    pub jitter_mm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub mode: EvalMode,
    pub aggregate: MetricSummary,
    pub per_person: BTreeMap<usize, MetricSummary>,
}

#[derive(Default)]
struct Acc {
    errors: Vec<f64>,
    mpjpe: Vec<f64>,
    root: Vec<f64>,
    root_pct: Vec<f64>,
    missed: usize,
    seq: Vec<(usize, Pose3D)>,
    jitter: Vec<f64>,
}

impl Acc {
    fn summary(&self) -> MetricSummary {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        MetricSummary {
            poses: self.mpjpe.len(),
            missed: self.missed,
            pck150: pck(&self.errors, PCK_THRESHOLD_MM),
            auc: auc(&self.errors),
            mpjpe_mm: mean(&self.mpjpe).unwrap_or(0.0),
            root_error_mm: mean(&self.root),
            root_error_pct: mean(&self.root_pct),
            jitter_mm: mean(&self.jitter),
        }
    }
}

/// Scores predictions against ground truth. Every prediction must refer to a
/// (frame, person) present in the truth.
pub fn evaluate(preds: &[EvalPrediction], truth: &[EvalTruth], mode: EvalMode) -> Result<EvalReport> {
    let gt: BTreeMap<(usize, usize), &EvalTruth> = truth.iter().map(|t| ((t.frame, t.person), t)).collect();
    let known: BTreeSet<usize> = truth.iter().map(|t| t.person).collect();
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    let mut seen: BTreeMap<(usize, usize), &EvalPrediction> = BTreeMap::new();
    for p in preds {
        if !gt.contains_key(&(p.frame, p.person)) {
            unknown.insert(if known.contains(&p.person) {
                format!("person {} at frame {}", p.person, p.frame)
            } else {
                format!("person {}", p.person)
            });
        } else if seen.insert((p.frame, p.person), p).is_some() {
            unknown.insert(format!("duplicate person {} at frame {}", p.person, p.frame));
        }
    }
    if !unknown.is_empty() {
        return Err(Error::EvalMismatch(unknown.into_iter().collect()));
    }

    let mut per: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut all = Acc::default();
    for ((frame, person), t) in &gt {
        let acc = per.entry(*person).or_default();
        match seen.get(&(*frame, *person)) {
            Some(p) => {
                let e = joint_errors_mm(&p.pose, &t.pose);
                let m = e.iter().sum::<f64>() / NUM_JOINTS as f64;
                for a in [&mut *acc, &mut all] {
                    a.errors.extend(e);
                    a.mpjpe.push(m);
                    if p.absolute {
                        let r = (p.pose[0] - t.pose[0]).norm();
                        a.root.push(r * 1000.0);
                        a.root_pct.push(100.0 * r / t.camera_distance);
                    }
                }
                acc.seq.push((*frame, p.pose));
            }
            None => {
                acc.missed += 1;
                all.missed += 1;
                if mode == EvalMode::All {
                    acc.errors.extend([f64::INFINITY; NUM_JOINTS]);
                    all.errors.extend([f64::INFINITY; NUM_JOINTS]);
                }
            }
        }
    }
    for acc in per.values_mut() {
        if let Some(j) = jitter_mm(&acc.seq) {
            acc.jitter.push(j);
            all.jitter.push(j);
        }
    }
    Ok(EvalReport {
        schema_version: 1,
        mode,
        aggregate: all.summary(),
        per_person: per.iter().map(|(k, a)| (*k, a.summary())).collect(),
    })
}
