//! SelecSLS Net layer graph and baselines, with analytic parameter, FLOP and
//! activation-memory accounting and a naive forward pass for shape checks.

pub mod analysis;
pub mod forward;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analysis::{activation_memory, activation_memory_paged, count_flops, count_params, level_summary, LevelSummary, MemoryModel, MemoryReport};
pub use forward::{forward_shapes, ForwardReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    /// Convolution without bias; `kernel × kernel`, zero padding `kernel / 2`.
    Conv { kernel: usize, stride: usize, groups: usize },
    /// Batch normalization followed by ReLU (scale and shift per channel).
    NormAct,
    Concat,
    Add,
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    /// Fully connected layer with bias on a globally pooled vector.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Level label used for reporting (`L0`, `L1`, …).
    pub level: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetGraph {
    pub name: String,
    pub layers: Vec<Layer>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl NetGraph {
    pub fn new(name: &str, in_channels: usize) -> Self {
        Self {
            name: name.into(),
            layers: vec![Layer {
                name: "input".into(),
                kind: LayerKind::Input,
                inputs: vec![],
                in_channels,
                out_channels: in_channels,
                level: "input".into(),
            }],
        }
    }

    pub fn output(&self) -> usize {
        self.layers.len() - 1
    }

    fn push(&mut self, name: String, level: &str, kind: LayerKind, inputs: Vec<usize>, out_channels: usize) -> usize {
        let in_channels = inputs.iter().map(|&i| self.layers[i].out_channels).sum();
        self.layers.push(Layer {
            name,
            kind,
            inputs,
            in_channels,
            out_channels,
            level: level.into(),
        });
        self.layers.len() - 1
    }

    /// Convolution followed by normalization and ReLU; returns the latter.
    pub fn conv_bn(&mut self, name: &str, level: &str, input: usize, out: usize, kernel: usize, stride: usize, groups: usize) -> usize {
        let c = self.push(format!("{name}.conv"), level, LayerKind::Conv { kernel, stride, groups }, vec![input], out);
        self.push(format!("{name}.bn"), level, LayerKind::NormAct, vec![c], out)
    }

    pub fn concat(&mut self, name: &str, level: &str, inputs: Vec<usize>) -> usize {
        let c = inputs.iter().map(|&i| self.layers[i].out_channels).sum();
        self.push(name.into(), level, LayerKind::Concat, inputs, c)
    }

    pub fn add(&mut self, name: &str, level: &str, inputs: Vec<usize>) -> usize {
        let c = self.layers[inputs[0]].out_channels;
        let l = self.push(name.into(), level, LayerKind::Add, inputs, c);
        self.layers[l].in_channels = c;
        l
    }

    pub fn max_pool(&mut self, name: &str, level: &str, input: usize, kernel: usize, stride: usize) -> usize {
        let c = self.layers[input].out_channels;
        self.push(name.into(), level, LayerKind::MaxPool { kernel, stride }, vec![input], c)
    }

    /// Structural checks: inputs precede their consumers, channel counts
    /// agree along every edge, groups divide channels.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let bad = |detail: String| Error::DimMismatch {
                edge: format!("layer {i} ({})", l.name),
                detail,
            };
            if l.inputs.iter().any(|&p| p >= i) {
                return Err(bad("input does not precede layer".into()));
            }
            let ins: Vec<usize> = l.inputs.iter().map(|&p| self.layers[p].out_channels).collect();
            match l.kind {
                LayerKind::Input => {
                    if !l.inputs.is_empty() {
                        return Err(bad("input layer with inputs".into()));
                    }
                }
                LayerKind::Concat => {
                    if l.out_channels != ins.iter().sum::<usize>() || ins.len() < 2 {
                        return Err(bad(format!("concat of {ins:?} declares {}", l.out_channels)));
                    }
                }
                LayerKind::Add => {
                    if ins.len() < 2 || ins.iter().any(|&c| c != l.out_channels) {
                        return Err(bad(format!("add of {ins:?} into {}", l.out_channels)));
                    }
                }
                LayerKind::Conv { groups, .. } => {
                    if ins.len() != 1 || ins[0] != l.in_channels {
                        return Err(bad(format!("conv input {ins:?} vs declared {}", l.in_channels)));
                    }
                    if groups == 0 || l.in_channels % groups != 0 || l.out_channels % groups != 0 {
                        return Err(bad(format!("groups {groups} do not divide {}→{}", l.in_channels, l.out_channels)));
                    }
                }
                LayerKind::NormAct | LayerKind::MaxPool { .. } | LayerKind::GlobalAvgPool => {
                    if ins.len() != 1 || ins[0] != l.out_channels {
                        return Err(bad(format!("elementwise layer {ins:?} → {}", l.out_channels)));
                    }
                }
                LayerKind::Linear => {
                    if ins.len() != 1 {
                        return Err(bad("linear takes one input".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Output shape of every layer for a `channels × h × w` input.
    pub fn infer_shapes(&self, h: usize, w: usize) -> Result<Vec<Shape>> {
        self.validate()?;
        let mut out: Vec<Shape> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let s = match l.kind {
                LayerKind::Input => Shape { c: l.out_channels, h, w },
                LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => {
                    let p = out[l.inputs[0]];
                    Shape {
                        c: l.out_channels,
                        h: p.h.div_ceil(stride),
                        w: p.w.div_ceil(stride),
                    }
                }
                LayerKind::NormAct => out[l.inputs[0]],
                LayerKind::Concat | LayerKind::Add => {
                    let first = out[l.inputs[0]];
                    if l.inputs.iter().any(|&p| (out[p].h, out[p].w) != (first.h, first.w)) {
                        return Err(Error::DimMismatch {
                            edge: format!("layer {i} ({})", l.name),
                            detail: "spatial sizes differ".into(),
                        });
                    }
                    Shape { c: l.out_channels, ..first }
                }
                LayerKind::GlobalAvgPool => Shape { c: l.out_channels, h: 1, w: 1 },
                LayerKind::Linear => Shape { c: l.out_channels, h: 1, w: 1 },
            };
            out.push(s);
        }
        Ok(out)
    }

    /// Indices of layers that consume layer `i`.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            for &p in &l.inputs {
                c[p].push(i);
            }
        }
        c
    }
}

/// Groups for a 3×3 convolution with `outputs` channels.
pub fn group_rule(outputs: usize) -> usize {
    if outputs > 192 {
        4
    } else if outputs > 96 {
        2
    } else {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipSource {
    None,
    /// Output of the first module of the level.
    First,
    /// Output of the preceding module.
    Previous,
    /// Outputs of every earlier module in the level.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipKind {
    /// Skip features join the inner concatenation.
    Concat,
    /// Skip features are added to the module output.
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelecSlsModuleSpec {
    pub stride: usize,
    pub k: usize,
    pub n_out: usize,
    pub skip: SkipSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub name: String,
    pub modules: Vec<SelecSlsModuleSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScheme {
    /// Wider outputs at the end of each level (128 after L1, 288 after L2).
    Wide,
    /// Module outputs equal to the level's `k`, final 416.
    Base,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub skip_kind: SkipKind,
    /// Source for every non-first module of a level.
    pub connectivity: SkipSource,
    pub outputs: OutputScheme,
}

impl Variant {
    pub const PROPOSED: Variant = Variant {
        skip_kind: SkipKind::Concat,
        connectivity: SkipSource::First,
        outputs: OutputScheme::Wide,
    };
}

pub fn selecsls_levels(v: &Variant) -> Vec<LevelSpec> {
    let level = |name: &str, k: usize, outs: &[usize]| LevelSpec {
        name: name.into(),
        modules: outs
            .iter()
            .enumerate()
            .map(|(i, &n_out)| SelecSlsModuleSpec {
                stride: if i == 0 { 2 } else { 1 },
                k,
                n_out,
                skip: if i == 0 { SkipSource::None } else { v.connectivity },
            })
            .collect(),
    };
    match v.outputs {
        OutputScheme::Wide => vec![
            level("L1", 64, &[64, 128]),
            level("L2", 128, &[128, 128, 288]),
            level("L3", 288, &[288, 288, 288, 416]),
        ],
        OutputScheme::Base => vec![
            level("L1", 64, &[64, 64]),
            level("L2", 128, &[128, 128, 128]),
            level("L3", 288, &[288, 288, 288, 416]),
        ],
    }
}

/// Appends one module: 3×3 (stride s) k → 1×1 k → 3×3 k/2 → 1×1 k → 3×3 k/2,
/// the three 3×3 outputs (2k) plus any concatenated skip go through a 1×1
/// to `n_out`.
fn selecsls_module(g: &mut NetGraph, name: &str, level: &str, input: usize, skips: &[usize], spec: &SelecSlsModuleSpec, kind: SkipKind) -> usize {
    let k = spec.k;
    let d1 = g.conv_bn(&format!("{name}.conv1"), level, input, k, 3, spec.stride, group_rule(k));
    let d2 = g.conv_bn(&format!("{name}.conv2"), level, d1, k, 1, 1, 1);
    let d3 = g.conv_bn(&format!("{name}.conv3"), level, d2, k / 2, 3, 1, group_rule(k / 2));
    let d4 = g.conv_bn(&format!("{name}.conv4"), level, d3, k, 1, 1, 1);
    let d5 = g.conv_bn(&format!("{name}.conv5"), level, d4, k / 2, 3, 1, group_rule(k / 2));
    let mut parts = vec![d1, d3, d5];
    if kind == SkipKind::Concat {
        parts.extend_from_slice(skips);
    }
    let cat = g.concat(&format!("{name}.cat"), level, parts);
    let out = g.conv_bn(&format!("{name}.conv6"), level, cat, spec.n_out, 1, 1, 1);
    if kind == SkipKind::Add && !skips.is_empty() {
        let mut terms = vec![out];
        for (i, &s) in skips.iter().enumerate() {
            let proj = if g.layers[s].out_channels == spec.n_out {
                s
            } else {
                g.conv_bn(&format!("{name}.proj{i}"), level, s, spec.n_out, 1, 1, 1)
            };
            terms.push(proj);
        }
        return g.add(&format!("{name}.add"), level, terms);
    }
    out
}

pub fn build_selecsls_variant(v: &Variant) -> NetGraph {
    let mut g = NetGraph::new("selecsls", 3);
    let mut x = g.conv_bn("l0", "L0", 0, 32, 3, 2, 1);
    for level in selecsls_levels(v) {
        let mut outputs: Vec<usize> = Vec::new();
        for (m, spec) in level.modules.iter().enumerate() {
            let skips: Vec<usize> = match spec.skip {
                SkipSource::None => vec![],
                SkipSource::First => vec![outputs[0]],
                SkipSource::Previous => vec![outputs[m - 1]],
                SkipSource::Dense => outputs.clone(),
            };
            let name = format!("{}.m{m}", level.name.to_lowercase());
            x = selecsls_module(&mut g, &name, &level.name, x, &skips, spec, v.skip_kind);
            outputs.push(x);
        }
    }
    g
}

/// The proposed network: concatenation skips from the first module of each
/// level with the wide output scheme.
pub fn build_selecsls() -> NetGraph {
    build_selecsls_variant(&Variant::PROPOSED)
}

fn bottleneck(g: &mut NetGraph, name: &str, level: &str, input: usize, mid: usize, out: usize, stride: usize) -> usize {
    let a = g.conv_bn(&format!("{name}.conv1"), level, input, mid, 1, 1, 1);
    let b = g.conv_bn(&format!("{name}.conv2"), level, a, mid, 3, stride, 1);
    let c = g.conv_bn(&format!("{name}.conv3"), level, b, out, 1, 1, 1);
    let short = if g.layers[input].out_channels != out || stride != 1 {
        g.conv_bn(&format!("{name}.down"), level, input, out, 1, stride, 1)
    } else {
        input
    };
    g.add(&format!("{name}.add"), level, vec![c, short])
}

/// ResNet-50 body. `core` keeps the network up to the first block of the
/// fifth level with its striding removed (output stride 16, as used for
/// pose backbones); otherwise the full classifier network is built.
pub fn build_resnet50(core: bool) -> NetGraph {
    let mut g = NetGraph::new(if core { "resnet50_core" } else { "resnet50" }, 3);
    let mut x = g.conv_bn("conv1", "L0", 0, 64, 7, 2, 1);
    x = g.max_pool("pool1", "L0", x, 3, 2);
    let stages: [(&str, usize, usize, usize, usize); 4] =
        [("L2", 3, 64, 256, 1), ("L3", 4, 128, 512, 2), ("L4", 6, 256, 1024, 2), ("L5", 3, 512, 2048, 2)];
    for (level, blocks, mid, out, stride) in stages {
        let (blocks, stride) = if core && level == "L5" { (1, 1) } else { (blocks, stride) };
        for b in 0..blocks {
            let s = if b == 0 { stride } else { 1 };
            x = bottleneck(&mut g, &format!("{}.b{b}", level.to_lowercase()), level, x, mid, out, s);
        }
    }
    if !core {
        let p = g.push("pool".into(), "head", LayerKind::GlobalAvgPool, vec![x], 2048);
        g.push("fc".into(), "head", LayerKind::Linear, vec![p], 1000);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes_for_512_by_320() {
        let g = build_selecsls();
        let s = g.infer_shapes(320, 512).unwrap();
        let last = s[g.output()];
        assert_eq!((last.c, last.h, last.w), (416, 20, 32));
        // per-level output resolution and module outputs
        let expect = [
            ("l0.bn", 32, 160, 256),
            ("l1.m0.conv6.bn", 64, 80, 128),
            ("l1.m1.conv6.bn", 128, 80, 128),
            ("l2.m0.conv6.bn", 128, 40, 64),
            ("l2.m1.conv6.bn", 128, 40, 64),
            ("l2.m2.conv6.bn", 288, 40, 64),
            ("l3.m0.conv6.bn", 288, 20, 32),
            ("l3.m1.conv6.bn", 288, 20, 32),
            ("l3.m2.conv6.bn", 288, 20, 32),
            ("l3.m3.conv6.bn", 416, 20, 32),
        ];
        for (name, c, h, w) in expect {
            let i = g.layers.iter().position(|l| l.name == name).unwrap();
            assert_eq!((s[i].c, s[i].h, s[i].w), (c, h, w), "{name}");
        }
    }

    #[test]
    fn module_layer_sequence() {
        let g = build_selecsls();
        for m in ["l1.m0", "l2.m1", "l3.m3"] {
            let kinds: Vec<String> = g
                .layers
                .iter()
                .filter(|l| l.name.starts_with(&format!("{m}.")))
                .filter_map(|l| match l.kind {
                    LayerKind::Conv { kernel, .. } => Some(format!("{kernel}x{kernel}")),
                    LayerKind::Concat => Some("cat".into()),
                    _ => None,
                })
                .collect();
            assert_eq!(kinds, ["3x3", "1x1", "3x3", "1x1", "3x3", "cat", "1x1"], "{m}");
        }
    }

    #[test]
    fn concat_width_is_2k_plus_skip() {
        let g = build_selecsls();
        for level in selecsls_levels(&Variant::PROPOSED) {
            let first_out = level.modules[0].n_out;
            for (m, spec) in level.modules.iter().enumerate() {
                let name = format!("{}.m{m}.cat", level.name.to_lowercase());
                let cat = g.layers.iter().find(|l| l.name == name).unwrap();
                let skip = if m == 0 { 0 } else { first_out };
                assert_eq!(cat.out_channels, 2 * spec.k + skip, "{name}");
            }
        }
    }

    #[test]
    fn skips_come_from_first_modules_only() {
        let g = build_selecsls();
        for l in g.layers.iter().filter(|l| l.kind == LayerKind::Concat) {
            let module = l.name.trim_end_matches(".cat");
            for &i in &l.inputs {
                let src = &g.layers[i].name;
                if !src.starts_with(&format!("{module}.")) {
                    assert!(src.contains(".m0.conv6"), "{} takes skip from {src}", l.name);
                }
            }
        }
    }

    #[test]
    fn stride_two_modules_take_no_skip() {
        for v in [Variant::PROPOSED, Variant { connectivity: SkipSource::Previous, ..Variant::PROPOSED }] {
            for level in selecsls_levels(&v) {
                for m in &level.modules {
                    if m.stride == 2 {
                        assert_eq!(m.skip, SkipSource::None);
                    }
                }
            }
        }
    }

    #[test]
    fn group_rule_thresholds() {
        assert_eq!(group_rule(96), 1);
        assert_eq!(group_rule(97), 2);
        assert_eq!(group_rule(192), 2);
        assert_eq!(group_rule(193), 4);
    }

    #[test]
    fn ablation_variants_build() {
        for connectivity in [SkipSource::First, SkipSource::Previous, SkipSource::Dense] {
            for skip_kind in [SkipKind::Concat, SkipKind::Add] {
                for outputs in [OutputScheme::Wide, OutputScheme::Base] {
                    let g = build_selecsls_variant(&Variant { skip_kind, connectivity, outputs });
                    let s = g.infer_shapes(64, 64).unwrap();
                    assert_eq!(s[g.output()].c, 416);
                }
            }
        }
    }

    #[test]
    fn resnet_core_output_stride_16() {
        let g = build_resnet50(true);
        let s = g.infer_shapes(320, 512).unwrap();
        assert_eq!(s[g.output()], Shape { c: 2048, h: 20, w: 32 });
    }

    #[test]
    fn validation_rejects_bad_concat() {
        let mut g = build_selecsls();
        let i = g.layers.iter().position(|l| l.kind == LayerKind::Concat).unwrap();
        g.layers[i].out_channels += 1;
        let err = g.validate().unwrap_err().to_string();
        assert!(err.contains(&g.layers[i].name), "{err}");
    }
}
