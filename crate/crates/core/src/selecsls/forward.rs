//! Naive single-image forward pass with seeded weights. Slow; meant for
//! toy resolutions to check that every edge of a graph carries the shape
//! the builders claim.

use ndarray::{s, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LayerKind, NetGraph, Shape};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    pub shapes: Vec<Shape>,
    /// Sum of the final output, for regression checks.
    pub checksum: f64,
}

fn shape_of(a: &Array3<f32>) -> Shape {
    let (c, h, w) = a.dim();
    Shape { c, h, w }
}

fn edge_error(g: &NetGraph, from: usize, to: usize, detail: String) -> Error {
    Error::DimMismatch {
        edge: format!("{} -> {}", g.layers[from].name, g.layers[to].name),
        detail,
    }
}

fn conv(x: &Array3<f32>, weights: &[f32], cout: usize, kernel: usize, stride: usize, groups: usize) -> Array3<f32> {
    let (cin, h, w) = x.dim();
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let pad = (kernel / 2) as isize;
    let (gin, gout) = (cin / groups, cout / groups);
    let mut y = Array3::<f32>::zeros((cout, ho, wo));
    for o in 0..cout {
        let g = o / gout;
        for ci in 0..gin {
            let c = g * gin + ci;
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weights[((o * gin + ci) * kernel + ky) * kernel + kx];
                    for oy in 0..ho {
                        let iy = (oy * stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            y[[o, oy, ox]] += wv * x[[c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Per-channel standardization over the image, then ReLU.
fn norm_act(x: &Array3<f32>) -> Array3<f32> {
    let mut y = x.clone();
    for mut ch in y.axis_iter_mut(Axis(0)) {
        let n = ch.len() as f32;
        let mean = ch.sum() / n;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        ch.mapv_inplace(|v| ((v - mean) * inv).max(0.0));
    }
    y
}

fn max_pool(x: &Array3<f32>, kernel: usize, stride: usize) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let pad = (kernel / 2) as isize;
    Array3::from_shape_fn((c, ho, wo), |(ch, oy, ox)| {
        let mut m = f32::NEG_INFINITY;
        for ky in 0..kernel {
            for kx in 0..kernel {
                let iy = (oy * stride) as isize + ky as isize - pad;
                let ix = (ox * stride) as isize + kx as isize - pad;
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    m = m.max(x[[ch, iy as usize, ix as usize]]);
                }
            }
        }
        m
    })
}

/// Runs `g` on `input` (channels × h × w). Every edge is checked against the
/// declared channel counts and spatial agreement before it is used.
pub fn forward_shapes(g: &NetGraph, input: &Array3<f32>, seed: u64) -> Result<ForwardReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Array3<f32>> = Vec::with_capacity(g.layers.len());
    for (i, l) in g.layers.iter().enumerate() {
        for &p in &l.inputs {
            if p >= i {
                return Err(edge_error(g, p, i, "input does not precede layer".into()));
            }
        }
        let y = match l.kind {
            LayerKind::Input => {
                if input.dim().0 != l.out_channels {
                    return Err(Error::DimMismatch {
                        edge: format!("tensor -> {}", l.name),
                        detail: format!("{} channels, expected {}", input.dim().0, l.out_channels),
                    });
                }
                input.clone()
            }
            LayerKind::Conv { kernel, stride, groups } => {
                let x = &values[l.inputs[0]];
                if x.dim().0 != l.in_channels {
                    return Err(edge_error(g, l.inputs[0], i, format!("{} channels, expected {}", x.dim().0, l.in_channels)));
                }
                let fan_in = kernel * kernel * l.in_channels / groups;
                let normal = Normal::new(0.0, (2.0 / fan_in as f32).sqrt()).expect("positive std");
                let n = fan_in * l.out_channels;
                let weights: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                conv(x, &weights, l.out_channels, kernel, stride, groups)
            }
            LayerKind::NormAct => norm_act(&values[l.inputs[0]]),
            LayerKind::MaxPool { kernel, stride } => max_pool(&values[l.inputs[0]], kernel, stride),
            LayerKind::Concat | LayerKind::Add => {
                let first = shape_of(&values[l.inputs[0]]);
                for &p in &l.inputs[1..] {
                    let s = shape_of(&values[p]);
                    let ok = (s.h, s.w) == (first.h, first.w) && (l.kind == LayerKind::Concat || s.c == first.c);
                    if !ok {
                        return Err(edge_error(g, p, i, format!("{s:?} does not fit {first:?}")));
                    }
                }
                if l.kind == LayerKind::Concat {
                    let views: Vec<_> = l.inputs.iter().map(|&p| values[p].view()).collect();
                    ndarray::concatenate(Axis(0), &views).expect("checked shapes")
                } else {
                    let mut acc = values[l.inputs[0]].clone();
                    for &p in &l.inputs[1..] {
                        acc += &values[p];
                    }
                    acc
                }
            }
            LayerKind::GlobalAvgPool => {
                let x = &values[l.inputs[0]];
                x.mean_axis(Axis(2)).and_then(|m| m.mean_axis(Axis(1))).expect("non-empty").insert_axis(Axis(1)).insert_axis(Axis(2))
            }
            LayerKind::Linear => {
                let x = values[l.inputs[0]].slice(s![.., 0, 0]).to_owned();
                let normal = Normal::new(0.0, (1.0 / l.in_channels as f32).sqrt()).expect("positive std");
                Array3::from_shape_fn((l.out_channels, 1, 1), |_| x.iter().map(|v| v * normal.sample(&mut rng)).sum())
            }
        };
        if y.dim().0 != l.out_channels {
            return Err(Error::DimMismatch {
                edge: format!("{} output", l.name),
                detail: format!("{} channels, declared {}", y.dim().0, l.out_channels),
            });
        }
        values.push(y);
    }
    let checksum = values.last().map(|v| v.iter().map(|&x| x as f64).sum()).unwrap_or(0.0);
    Ok(ForwardReport {
        shapes: values.iter().map(shape_of).collect(),
        checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selecsls::build_selecsls;

    fn toy_input(c: usize, h: usize, w: usize) -> Array3<f32> {
        Array3::from_shape_fn((c, h, w), |(c, y, x)| ((c * 31 + y * 7 + x * 3) % 17) as f32 / 17.0 - 0.5)
    }

    #[test]
    fn toy_forward_resolutions() {
        let g = build_selecsls();
        let r = forward_shapes(&g, &toy_input(3, 64, 64), 1).unwrap();
        let at = |name: &str| r.shapes[g.layers.iter().position(|l| l.name == name).unwrap()];
        assert_eq!(at("l1.m1.conv6.bn"), Shape { c: 128, h: 16, w: 16 });
        assert_eq!(at("l2.m2.conv6.bn"), Shape { c: 288, h: 8, w: 8 });
        assert_eq!(at("l3.m3.conv6.bn"), Shape { c: 416, h: 4, w: 4 });
        assert_eq!(r.shapes, g.infer_shapes(64, 64).unwrap());
        assert!(r.checksum.is_finite() && r.checksum > 0.0);
    }

    #[test]
    fn forward_is_seeded() {
        let g = build_selecsls();
        let x = toy_input(3, 32, 32);
        let a = forward_shapes(&g, &x, 5).unwrap();
        let b = forward_shapes(&g, &x, 5).unwrap();
        let c = forward_shapes(&g, &x, 6).unwrap();
        assert_eq!(a.checksum.to_bits(), b.checksum.to_bits());
        assert_ne!(a.checksum, c.checksum);
    }

    #[test]
    fn mismatched_edge_is_named() {
        let mut g = build_selecsls();
        let i = g.layers.iter().position(|l| l.name == "l2.m1.conv1.conv").unwrap();
        g.layers[i].in_channels = 64;
        let err = forward_shapes(&g, &toy_input(3, 32, 32), 1).unwrap_err().to_string();
        assert!(err.contains("l2.m0.conv6.bn -> l2.m1.conv1.conv"), "{err}");
    }

    #[test]
    fn wrong_input_channels_rejected() {
        let g = build_selecsls();
        assert!(forward_shapes(&g, &toy_input(1, 16, 16), 1).is_err());
    }

    #[test]
    fn conv_matches_hand_computation() {
        // 1×1 input channel, 3×3 kernel of ones, stride 1: interior sums 9
        let x = Array3::from_elem((1, 4, 4), 1.0f32);
        let y = conv(&x, &[1.0; 9], 1, 3, 1, 1);
        assert_eq!(y[[0, 1, 1]], 9.0);
        assert_eq!(y[[0, 0, 0]], 4.0);
        assert_eq!(y[[0, 0, 1]], 6.0);
        // grouped: each output sees only its own input channel
        let x = Array3::from_shape_fn((2, 1, 1), |(c, _, _)| (c + 1) as f32);
        let y = conv(&x, &[1.0, 1.0], 2, 1, 1, 2);
        assert_eq!((y[[0, 0, 0]], y[[1, 0, 0]]), (1.0, 2.0));
    }
}
