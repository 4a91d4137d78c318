use std::fmt::Write as _;

use mocap_core::selecsls::{
    activation_memory, activation_memory_paged, build_resnet50, build_selecsls, build_selecsls_variant, count_flops, count_params,
    level_summary, LevelSummary, MemoryModel, NetGraph, OutputScheme, SkipKind, SkipSource, Variant,
};
use mocap_core::Result;
use serde::Serialize;

use super::Context;
use crate::output::write_json;
use crate::output::OUTPUT_SCHEMA_VERSION;

#[derive(Serialize)]
struct MemoryRow {
    batch: usize,
    inference_bytes: usize,
    training_bytes: usize,
    training_paged_bytes: usize,
    /// Ratios against the ResNet-50 core under the same model.
    inference_ratio: f64,
    training_ratio: f64,
    training_paged_ratio: f64,
}

#[derive(Serialize)]
struct NetEntry {
    name: String,
    params: usize,
    flops: u64,
    levels: Vec<LevelSummary>,
    memory: Vec<MemoryRow>,
}

#[derive(Serialize)]
struct NetReport {
    schema_version: u32,
    width: usize,
    height: usize,
    baseline: String,
    page_bytes: usize,
    nets: Vec<NetEntry>,
}

fn graphs() -> Vec<(String, NetGraph)> {
    let v = |skip_kind, connectivity, outputs| Variant { skip_kind, connectivity, outputs };
    vec![
        ("selecsls".into(), build_selecsls()),
        ("selecsls_prev_concat".into(), build_selecsls_variant(&v(SkipKind::Concat, SkipSource::Previous, OutputScheme::Wide))),
        ("selecsls_first_add".into(), build_selecsls_variant(&v(SkipKind::Add, SkipSource::First, OutputScheme::Wide))),
        ("selecsls_base".into(), build_selecsls_variant(&v(SkipKind::Concat, SkipSource::First, OutputScheme::Base))),
        ("dense_concat".into(), build_selecsls_variant(&v(SkipKind::Concat, SkipSource::Dense, OutputScheme::Wide))),
        ("resnet50_core".into(), build_resnet50(true)),
    ]
}

/// Per-level shapes, parameters, FLOPs and memory for SelecSLS, its
/// ablation variants and the ResNet-50 core; writes `net_report.json` and
/// `net_report.txt`.
pub fn net_report(ctx: &Context) -> Result<String> {
    let n = &ctx.config.net;
    let out = ctx.out_dir()?;
    let (h, w) = (n.height, n.width);
    let baseline = build_resnet50(true);
    let mem = |g: &NetGraph, b: usize| -> Result<(usize, usize, usize)> {
        Ok((
            activation_memory(g, b, h, w, MemoryModel::Inference)?.total_bytes,
            activation_memory(g, b, h, w, MemoryModel::Training)?.total_bytes,
            activation_memory_paged(g, b, h, w, MemoryModel::Training, n.page_bytes)?.total_bytes,
        ))
    };
    let mut nets = Vec::new();
    for (name, g) in graphs() {
        let mut memory = Vec::new();
        for &b in &n.batches {
            let (i, t, p) = mem(&g, b)?;
            let (bi, bt, bp) = mem(&baseline, b)?;
            memory.push(MemoryRow {
                batch: b,
                inference_bytes: i,
                training_bytes: t,
                training_paged_bytes: p,
                inference_ratio: i as f64 / bi as f64,
                training_ratio: t as f64 / bt as f64,
                training_paged_ratio: p as f64 / bp as f64,
            });
        }
        nets.push(NetEntry {
            params: count_params(&g).1,
            flops: count_flops(&g, h, w)?.1,
            levels: level_summary(&g, h, w)?,
            memory,
            name,
        });
    }
    let report = NetReport {
        schema_version: OUTPUT_SCHEMA_VERSION,
        width: w,
        height: h,
        baseline: "resnet50_core".into(),
        page_bytes: n.page_bytes,
        nets,
    };
    write_json(&out.join("net_report.json"), &report)?;
    let text = render_text(&report);
    std::fs::write(out.join("net_report.txt"), &text)?;
    Ok(text)
}

fn render_text(r: &NetReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "input {}x{}, memory ratios against {}", r.width, r.height, r.baseline);
    for net in &r.nets {
        let _ = writeln!(s, "\n{}: {:.3}M params, {:.2} GFLOPs", net.name, net.params as f64 / 1e6, net.flops as f64 / 1e9);
        let _ = writeln!(s, "  {:<6} {:>16} {:>10} {:>10}", "level", "output (c,h,w)", "params", "MFLOPs");
        for l in &net.levels {
            let shape = format!("{}x{}x{}", l.output.c, l.output.h, l.output.w);
            let _ = writeln!(s, "  {:<6} {:>16} {:>10} {:>10.1}", l.level, shape, l.params, l.flops as f64 / 1e6);
        }
        let _ = writeln!(s, "  {:<6} {:>12} {:>12} {:>12} {:>8} {:>8} {:>8}", "batch", "infer MiB", "train MiB", "paged MiB", "r_inf", "r_train", "r_paged");
        for m in &net.memory {
            let mib = |b: usize| b as f64 / (1u64 << 20) as f64;
            let _ = writeln!(
                s,
                "  {:<6} {:>12.1} {:>12.1} {:>12.1} {:>8.3} {:>8.3} {:>8.3}",
                m.batch,
                mib(m.inference_bytes),
                mib(m.training_bytes),
                mib(m.training_paged_bytes),
                m.inference_ratio,
                m.training_ratio,
                m.training_paged_ratio
            );
        }
    }
    s
}
