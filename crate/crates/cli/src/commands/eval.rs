use std::path::Path;

use mocap_core::metrics::{evaluate, EvalReport, MetricSummary};
use mocap_core::{Error, Result};
use serde::{de::DeserializeOwned, Serialize};

use super::run::PredictionFile;
use super::simulate::TruthFile;
use super::Context;
use crate::output::{num, opt_num, write_csv, write_json, OUTPUT_SCHEMA_VERSION};

#[derive(Serialize)]
struct Check {
    name: &'static str,
    limit: f64,
    value: Option<f64>,
    pass: bool,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    schema_version: u32,
    report: &'a EvalReport,
    checks: Vec<Check>,
}

fn read_versioned<T: DeserializeOwned>(path: &Path, version: impl Fn(&T) -> u32) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let v: T = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if version(&v) != OUTPUT_SCHEMA_VERSION {
        return Err(Error::Format(format!("{}: unsupported schema {}", path.display(), version(&v))));
    }
    Ok(v)
}

fn summary_row(label: String, s: &MetricSummary) -> Vec<String> {
    vec![
        label,
        s.poses.to_string(),
        s.missed.to_string(),
        num(s.pck150),
        num(s.auc),
        num(s.mpjpe_mm),
        opt_num(s.root_error_mm),
        opt_num(s.root_error_pct),
        opt_num(s.jitter_mm),
    ]
}

/// Scores predictions against ground truth; writes `metrics.json` and
/// `metrics.csv`.
pub fn eval(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    let out = ctx.out_dir()?;
    let pred_path = cfg.eval.predictions.clone().unwrap_or_else(|| out.join("predictions.json"));
    let truth_path = cfg.eval.truth.clone().unwrap_or_else(|| out.join("ground_truth.json"));
    let preds: PredictionFile = read_versioned(&pred_path, |p: &PredictionFile| p.schema_version)?;
    let truth: TruthFile = read_versioned(&truth_path, |t: &TruthFile| t.schema_version)?;
    let report = evaluate(&preds.predictions, &truth.truth, cfg.eval.mode)?;
    let a = &report.aggregate;
    let mut checks = Vec::new();
    if let Some(limit) = cfg.eval.max_mpjpe_mm {
        checks.push(Check { name: "max_mpjpe_mm", limit, value: Some(a.mpjpe_mm), pass: a.mpjpe_mm < limit });
    }
    if let Some(limit) = cfg.eval.min_pck150 {
        checks.push(Check { name: "min_pck150", limit, value: Some(a.pck150), pass: a.pck150 >= limit });
    }
    if let Some(limit) = cfg.eval.max_root_error_pct {
        let v = a.root_error_pct;
        checks.push(Check { name: "max_root_error_pct", limit, value: v, pass: v.is_some_and(|v| v < limit) });
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    write_json(
        &out.join("metrics.json"),
        &MetricsFile {
            schema_version: OUTPUT_SCHEMA_VERSION,
            report: &report,
            checks,
        },
    )?;
    let header = ["person", "poses", "missed", "pck150", "auc", "mpjpe_mm", "root_error_mm", "root_error_pct", "jitter_mm"]
        .map(String::from);
    let mut rows: Vec<Vec<String>> = report.per_person.iter().map(|(id, s)| summary_row(id.to_string(), s)).collect();
    rows.push(summary_row("all".into(), a));
    write_csv(&out.join("metrics.csv"), &header, &rows)?;
    Ok(format!(
        "{:?} mode, {} poses ({} missed): 3DPCK@150 {:.1}, AUC {:.1}, MPJPE {:.2} mm, root error {}, jitter {}{}",
        report.mode,
        a.poses,
        a.missed,
        a.pck150,
        a.auc,
        a.mpjpe_mm,
        a.root_error_pct.map_or("n/a".into(), |v| format!("{v:.2}%")),
        a.jitter_mm.map_or("n/a".into(), |v| format!("{v:.2} mm")),
        if failed > 0 { format!("; {failed} check(s) failed") } else { String::new() },
    ))
}
