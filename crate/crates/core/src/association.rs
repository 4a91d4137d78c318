//! Multi-person 2D grouping from heatmaps and part affinity fields, and
//! assembly of the per-person Stage II input `S_k`.

use nalgebra::Vector2;
use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::encoding::{Encoding, ENCODING_DIM};
use crate::simulator::{map_to_pixel, StageOneMaps};
use crate::skeleton::{Joint, NUM_JOINTS};

/// Width of one `S_k` row: neck-relative (u, v), confidence, encoding.
pub const ROW_DIM: usize = 3 + ENCODING_DIM;
pub const INPUT_DIM: usize = NUM_JOINTS * ROW_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationParams {
    pub peak_threshold: f64,
    pub s_min: f64,
    pub min_fraction: f64,
    pub n_samples: usize,
    /// Gaussian pre-smoothing of heatmaps before peak search, in cells (0
    /// disables it).
    pub smoothing: f64,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            peak_threshold: 0.3,
            s_min: 0.05,
            min_fraction: 0.7,
            n_samples: 10,
            smoothing: 1.0,
        }
    }
}

/// A heatmap maximum in map coordinates (cell centers at integers).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Peak {
    pub fn pos(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn cell(&self, width: usize, height: usize) -> (usize, usize) {
        (
            (self.x.round().max(0.0) as usize).min(width - 1),
            (self.y.round().max(0.0) as usize).min(height - 1),
        )
    }
}

/// Vertex offset of the parabola through (-1, l), (0, c), (1, r).
fn parabola_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Fits the parabola to log values when possible, which is exact for a
/// Gaussian blob.
fn refine(l: f64, c: f64, r: f64) -> f64 {
    if l > 0.0 && r > 0.0 && c > 0.0 {
        parabola_offset(l.ln(), c.ln(), r.ln())
    } else {
        parabola_offset(l, c, r)
    }
}

/// Local maxima above `threshold` under 3×3 non-maximum suppression. On
/// plateaus the last cell in raster order survives.
pub fn detect_peaks(h: ArrayView2<f32>, threshold: f64) -> Vec<Peak> {
    let (rows, cols) = h.dim();
    let mut out = Vec::new();
    for y in 0..rows {
        for x in 0..cols {
            let v = h[(y, x)];
            if !(v as f64 > threshold) {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= cols as i64 || ny >= rows as i64 {
                        continue;
                    }
                    let n = h[(ny as usize, nx as usize)];
                    let before = (dy, dx) < (0, 0);
                    if n > v || (!before && n == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let at = |xx: usize, yy: usize| h[(yy, xx)] as f64;
            let c = v as f64;
            let ox = if x > 0 && x + 1 < cols {
                refine(at(x - 1, y), c, at(x + 1, y))
            } else {
                0.0
            };
            let oy = if y > 0 && y + 1 < rows {
                refine(at(x, y - 1), c, at(x, y + 1))
            } else {
                0.0
            };
            out.push(Peak {
                x: x as f64 + ox,
                y: y as f64 + oy,
                confidence: c,
            });
        }
    }
    out
}

/// Separable Gaussian blur with zero padding.
pub fn smooth_heatmap(h: ArrayView2<f32>, sigma: f64) -> Array2<f32> {
    if sigma <= 0.0 {
        return h.to_owned();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (rows, cols) = h.dim();
    let mut tmp = Array2::<f64>::zeros((rows, cols));
    for y in 0..rows {
        for x in 0..cols {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = x as i64 + k as i64 - r;
                if xx >= 0 && xx < cols as i64 {
                    acc += w * h[(y, xx as usize)] as f64;
                }
            }
            tmp[(y, x)] = acc / norm;
        }
    }
    let mut out = Array2::<f32>::zeros((rows, cols));
    for y in 0..rows {
        for x in 0..cols {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = y as i64 + k as i64 - r;
                if yy >= 0 && yy < rows as i64 {
                    acc += w * tmp[(yy as usize, x)];
                }
            }
            out[(y, x)] = (acc / norm) as f32;
        }
    }
    out
}

/// Peaks located on a blurred copy of `h`. Positions come from the blurred
/// map (a blurred Gaussian stays Gaussian around the same center);
/// confidence and threshold use the raw value at the peak cell.
pub fn detect_peaks_smoothed(h: ArrayView2<f32>, threshold: f64, sigma: f64) -> Vec<Peak> {
    if sigma <= 0.0 {
        return detect_peaks(h, threshold);
    }
    let blurred = smooth_heatmap(h, sigma);
    detect_peaks(blurred.view(), 0.0)
        .into_iter()
        .filter_map(|mut p| {
            let (cx, cy) = (p.x.round() as usize, p.y.round() as usize);
            let raw = h[(cy.min(h.nrows() - 1), cx.min(h.ncols() - 1))] as f64;
            (raw > threshold).then(|| {
                p.confidence = raw;
                p
            })
        })
        .collect()
}

fn bilinear(f: &ArrayView3<f32>, p: &Vector2<f64>) -> Vector2<f64> {
    let (_, rows, cols) = f.dim();
    let x = p.x.clamp(0.0, (cols - 1) as f64);
    let y = p.y.clamp(0.0, (rows - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(cols - 1), (y0 + 1).min(rows - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let mut out = Vector2::zeros();
    for c in 0..2 {
        let v00 = f[(c, y0, x0)] as f64;
        let v10 = f[(c, y0, x1)] as f64;
        let v01 = f[(c, y1, x0)] as f64;
        let v11 = f[(c, y1, x1)] as f64;
        out[c] = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PafScore {
    pub score: f64,
    /// Fraction of samples whose alignment exceeds `s_min`.
    pub fraction_above: f64,
    pub degenerate: bool,
}

/// Mean alignment of the field `f` (`[2, H, W]`) with the child→parent
/// direction over `n_samples` equispaced points, endpoints included.
pub fn paf_score(child: &Peak, parent: &Peak, f: ArrayView3<f32>, n_samples: usize, s_min: f64) -> PafScore {
    let (a, b) = (child.pos(), parent.pos());
    let d = b - a;
    let len = d.norm();
    if len < 1e-9 || n_samples == 0 {
        return PafScore {
            score: 0.0,
            fraction_above: 0.0,
            degenerate: true,
        };
    }
    let u = d / len;
    let mut sum = 0.0;
    let mut above = 0usize;
    for i in 0..n_samples {
        let t = if n_samples == 1 {
            0.5
        } else {
            i as f64 / (n_samples - 1) as f64
        };
        let s = bilinear(&f, &(a + d * t)).dot(&u);
        sum += s;
        above += usize::from(s > s_min);
    }
    PafScore {
        score: sum / n_samples as f64,
        fraction_above: above as f64 / n_samples as f64,
        degenerate: false,
    }
}

/// One person: the peak index chosen for every joint type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PersonGroup {
    pub joints: [Option<usize>; NUM_JOINTS],
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Peak order used for tie-breaking, independent of input order.
fn canonical_order(peaks: &[Peak]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..peaks.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (&peaks[a], &peaks[b]);
        p.y.total_cmp(&q.y)
            .then(p.x.total_cmp(&q.x))
            .then(q.confidence.total_cmp(&p.confidence))
    });
    idx
}

/// Greedy per-limb bipartite matching followed by merging limbs that share
/// endpoints. Groups without a neck are discarded. Output is sorted by the
/// neck peak's canonical position.
pub fn group_parts(peaks: &[Vec<Peak>], pafs: ArrayView3<f32>, params: &AssociationParams) -> Vec<PersonGroup> {
    group_parts_4d(peaks, |j| pafs.slice_move(ndarray::s![2 * j..2 * j + 2, .., ..]), params)
}

/// Same as [`group_parts`] reading fields from a `[J, 2, H, W]` array.
pub fn group_parts_maps(peaks: &[Vec<Peak>], maps: &StageOneMaps, params: &AssociationParams) -> Vec<PersonGroup> {
    group_parts_4d(peaks, |j| maps.pafs.index_axis(Axis(0), j), params)
}

fn group_parts_4d<'a>(
    peaks: &[Vec<Peak>],
    field: impl Fn(usize) -> ArrayView3<'a, f32>,
    params: &AssociationParams,
) -> Vec<PersonGroup> {
    assert_eq!(peaks.len(), NUM_JOINTS, "one peak list per joint type");
    let ranks: Vec<Vec<usize>> = peaks
        .iter()
        .map(|p| {
            let order = canonical_order(p);
            let mut rank = vec![0; p.len()];
            for (r, &i) in order.iter().enumerate() {
                rank[i] = r;
            }
            rank
        })
        .collect();
    let mut offset = [0usize; NUM_JOINTS + 1];
    for j in 0..NUM_JOINTS {
        offset[j + 1] = offset[j] + peaks[j].len();
    }
    let mut uf = UnionFind::new(offset[NUM_JOINTS]);

    for child in Joint::ALL.into_iter().filter(|j| j.has_2d()) {
        let Some(parent) = child.parent() else { continue };
        let (c, p) = (child.index(), parent.index());
        let f = field(c);
        let mut cands = Vec::new();
        for (ci, cp) in peaks[c].iter().enumerate() {
            for (pi, pp) in peaks[p].iter().enumerate() {
                let s = paf_score(cp, pp, f.view(), params.n_samples, params.s_min);
                if !s.degenerate && s.score > params.s_min && s.fraction_above >= params.min_fraction {
                    cands.push((s.score, ci, pi));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(ranks[c][a.1].cmp(&ranks[c][b.1]))
                .then(ranks[p][a.2].cmp(&ranks[p][b.2]))
        });
        let mut used_c = vec![false; peaks[c].len()];
        let mut used_p = vec![false; peaks[p].len()];
        for (_, ci, pi) in cands {
            if used_c[ci] || used_p[pi] {
                continue;
            }
            used_c[ci] = true;
            used_p[pi] = true;
            uf.union(offset[c] + ci, offset[p] + pi);
        }
    }

    let neck = Joint::Neck.index();
    let mut groups: Vec<(usize, PersonGroup)> = Vec::new();
    for (ni, _) in peaks[neck].iter().enumerate() {
        let root = uf.find(offset[neck] + ni);
        let mut g = PersonGroup {
            joints: [None; NUM_JOINTS],
        };
        for j in 0..NUM_JOINTS {
            for k in 0..peaks[j].len() {
                if uf.find(offset[j] + k) == root {
                    g.joints[j] = Some(k);
                }
            }
        }
        groups.push((ranks[neck][ni], g));
    }
    groups.sort_by_key(|(r, _)| *r);
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Per-person observation extracted from the Stage I maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonObservation {
    pub person: usize,
    /// Absolute pixel coordinates.
    pub pixels: [Vector2<f64>; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
    pub confidence: [f64; NUM_JOINTS],
    pub encodings: [Encoding; NUM_JOINTS],
}

impl PersonObservation {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// `S_k` flattened row-major, `J × (3 + 3J)`. 2D entries are neck
    /// relative in pixels, invisible rows are zero.
    pub fn input_matrix(&self) -> Vec<f64> {
        let mut s = vec![0.0; INPUT_DIM];
        let neck = self.pixels[Joint::Neck.index()];
        for j in 0..NUM_JOINTS {
            if !self.visible[j] {
                continue;
            }
            let row = &mut s[j * ROW_DIM..(j + 1) * ROW_DIM];
            let rel = self.pixels[j] - neck;
            row[0] = rel.x;
            row[1] = rel.y;
            row[2] = self.confidence[j];
            row[3..].copy_from_slice(&self.encodings[j]);
        }
        s
    }

    /// Hides joint `j`, zeroing its row in `S_k`.
    pub fn drop_joint(&mut self, j: usize) {
        self.visible[j] = false;
        self.confidence[j] = 0.0;
        self.encodings[j] = [0.0; ENCODING_DIM];
    }
}

/// Reads `l_{j,k}` at the nearest map cell of each grouped peak.
pub fn extract_features(groups: &[PersonGroup], peaks: &[Vec<Peak>], maps: &StageOneMaps) -> Vec<PersonObservation> {
    let (w, h) = (maps.map_width(), maps.map_height());
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut obs = PersonObservation {
                person: k,
                pixels: [Vector2::zeros(); NUM_JOINTS],
                visible: [false; NUM_JOINTS],
                confidence: [0.0; NUM_JOINTS],
                encodings: [[0.0; ENCODING_DIM]; NUM_JOINTS],
            };
            for j in 0..NUM_JOINTS {
                let Some(pi) = g.joints[j] else { continue };
                let peak = &peaks[j][pi];
                let (cx, cy) = peak.cell(w, h);
                obs.pixels[j] = map_to_pixel(&peak.pos());
                obs.visible[j] = true;
                obs.confidence[j] = peak.confidence;
                obs.encodings[j] = maps.encoding_at(cx, cy);
            }
            obs
        })
        .collect()
}

/// Peaks, grouping and feature extraction in one call.
pub fn associate(maps: &StageOneMaps, params: &AssociationParams) -> (Vec<Vec<Peak>>, Vec<PersonObservation>) {
    let peaks: Vec<Vec<Peak>> = (0..NUM_JOINTS)
        .map(|j| {
            if Joint::from_index(j).is_some_and(|jt| jt.has_2d()) {
                detect_peaks_smoothed(
                    maps.heatmaps.index_axis(Axis(0), j),
                    params.peak_threshold,
                    params.smoothing,
                )
            } else {
                Vec::new()
            }
        })
        .collect();
    let groups = group_parts_maps(&peaks, maps, params);
    let obs = extract_features(&groups, &peaks, maps);
    (peaks, obs)
}

#[derive(Serialize)]
struct DebugPerson {
    person: usize,
    joints: Vec<DebugJoint>,
}

#[derive(Serialize)]
struct DebugJoint {
    joint: &'static str,
    u: f64,
    v: f64,
    confidence: f64,
}

/// JSON dump of the grouping for overlay plots.
pub fn debug_json(observations: &[PersonObservation]) -> serde_json::Value {
    let persons: Vec<DebugPerson> = observations
        .iter()
        .map(|o| DebugPerson {
            person: o.person,
            joints: Joint::ALL
                .into_iter()
                .filter(|j| o.visible[j.index()])
                .map(|j| DebugJoint {
                    joint: j.name(),
                    u: o.pixels[j.index()].x,
                    v: o.pixels[j.index()].y,
                    confidence: o.confidence[j.index()],
                })
                .collect(),
        })
        .collect();
    serde_json::to_value(persons).expect("plain data serializes")
}

/// Matches predicted persons to ground-truth subjects by nearest visible
/// joints. A prediction belongs to subject `k` when every one of its joints
/// lies within `tol_px` of subject `k`'s joint of the same type. Returns the
/// subject index per observation.
pub fn label_observations(
    observations: &[PersonObservation],
    views: &[crate::simulator::PersonView],
    tol_px: f64,
) -> Vec<Option<usize>> {
    observations
        .iter()
        .map(|o| {
            views.iter().position(|v| {
                (0..NUM_JOINTS)
                    .filter(|&j| o.visible[j])
                    .all(|j| v.visible[j] && (o.pixels[j] - v.pixels[j]).norm() <= tol_px)
            })
        })
        .collect()
}

/// True when every subject with a visible neck comes back as exactly one
/// observation holding exactly its visible joints.
pub fn grouping_is_exact(
    observations: &[PersonObservation],
    views: &[crate::simulator::PersonView],
    tol_px: f64,
) -> bool {
    let labels = label_observations(observations, views, tol_px);
    if labels.iter().any(|l| l.is_none()) {
        return false;
    }
    let neck = Joint::Neck.index();
    for (k, v) in views.iter().enumerate() {
        let hits: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(k))
            .map(|(i, _)| i)
            .collect();
        if !v.visible[neck] {
            if !hits.is_empty() {
                return false;
            }
            continue;
        }
        if hits.len() != 1 || observations[hits[0]].visible != v.visible {
            return false;
        }
    }
    true
}
