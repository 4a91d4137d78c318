//! Identity tracking across frames: torso color histograms, pose
//! dissimilarity, optimal assignment, occlusion retention and appearance
//! refresh.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{HsSource, TORSO_JOINTS};
use crate::skeleton::{Pose3D, NUM_JOINTS};

pub const HIST_BINS: usize = 30;

/// Normalized 30×30 hue/saturation histogram, hue-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceHist(pub Vec<f64>);

impl AppearanceHist {
    fn bin(v: f64) -> usize {
        ((v * HIST_BINS as f64).floor().max(0.0) as usize).min(HIST_BINS - 1)
    }

    pub fn from_samples(samples: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut h = vec![0.0; HIST_BINS * HIST_BINS];
        let mut n = 0usize;
        for (hue, sat) in samples {
            h[Self::bin(hue.rem_euclid(1.0)) * HIST_BINS + Self::bin(sat)] += 1.0;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyRegion);
        }
        h.iter_mut().for_each(|v| *v /= n as f64);
        Ok(Self(h))
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Squared Euclidean distance between histograms.
    pub fn distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn area(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
        }
    }
}

/// Bounding box of the visible torso joints, clipped to the image.
pub fn torso_bbox(pixels: &[Vector2<f64>; NUM_JOINTS], visible: &[bool; NUM_JOINTS], width: u32, height: u32) -> Option<BBox> {
    let pts: Vec<_> = TORSO_JOINTS
        .iter()
        .filter(|j| visible[j.index()])
        .map(|j| pixels[j.index()])
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let clip = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    let b = BBox {
        x0: clip(pts.iter().map(|p| p.x).fold(f64::MAX, f64::min).floor(), width),
        y0: clip(pts.iter().map(|p| p.y).fold(f64::MAX, f64::min).floor(), height),
        x1: clip(pts.iter().map(|p| p.x).fold(f64::MIN, f64::max).ceil(), width),
        y1: clip(pts.iter().map(|p| p.y).fold(f64::MIN, f64::max).ceil(), height),
    };
    (!b.is_empty()).then_some(b)
}

pub fn compute_appearance(src: &dyn HsSource, bbox: &BBox) -> Result<AppearanceHist> {
    if bbox.is_empty() || bbox.x1 > src.width() || bbox.y1 > src.height() {
        return Err(Error::EmptyRegion);
    }
    AppearanceHist::from_samples(
        (bbox.y0..bbox.y1).flat_map(|y| (bbox.x0..bbox.x1).map(move |x| (x, y))).map(|(x, y)| src.sample(x, y)),
    )
}

/// One detected person in the current frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub pixels: [Vector2<f64>; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
    /// Root-relative 3D pose, meters.
    pub p3d: Pose3D,
    pub appearance: Option<AppearanceHist>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DissimilarityWeights {
    pub appearance: f64,
    pub pose2d: f64,
    pub pose3d: f64,
    /// Median same-person values between consecutive frames, measured on
    /// simulated 3-person scenes at σ ∈ {0, 0.05}; each component is divided
    /// by its scale.
    pub scale_appearance: f64,
    pub scale_pose2d: f64,
    pub scale_pose3d: f64,
    /// Added when the 2D/3D components are unavailable.
    pub missing_penalty: f64,
    pub image_diagonal: f64,
}

impl Default for DissimilarityWeights {
    fn default() -> Self {
        Self {
            appearance: 1.0,
            pose2d: 1.0,
            pose3d: 1.0,
            scale_appearance: 1.4e-3,
            scale_pose2d: 1.6e-6,
            scale_pose3d: 1.5e-4,
            missing_penalty: 3.0,
            image_diagonal: (512f64 * 512.0 + 320.0 * 320.0).sqrt(),
        }
    }
}

/// Last known state a detection is compared against.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSummary<'a> {
    pub pixels: &'a [Vector2<f64>; NUM_JOINTS],
    pub visible: &'a [bool; NUM_JOINTS],
    pub p3d: &'a Pose3D,
    pub appearance: Option<&'a AppearanceHist>,
    /// Frames since the pose was observed; pose terms are divided by
    /// `(1 + age)²` since squared displacement grows with elapsed time.
    pub age: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Dissimilarity {
    pub appearance: f64,
    pub pose2d: Option<f64>,
    pub pose3d: Option<f64>,
    pub total: f64,
}

pub fn dissimilarity(det: &Detection, trk: &TrackSummary, w: &DissimilarityWeights) -> Dissimilarity {
    let sa = match (&det.appearance, trk.appearance) {
        (Some(a), Some(b)) => a.distance(b),
        _ => 0.0,
    };
    let shared: Vec<usize> = (0..NUM_JOINTS).filter(|&j| det.visible[j] && trk.visible[j]).collect();
    let (s2, s3) = if shared.is_empty() {
        (None, None)
    } else {
        let d2 = w.image_diagonal * w.image_diagonal;
        let s2 = shared.iter().map(|&j| (det.pixels[j] - trk.pixels[j]).norm_squared() / d2).sum::<f64>() / shared.len() as f64;
        let s3 = shared.iter().map(|&j| (det.p3d[j] - trk.p3d[j]).norm_squared()).sum::<f64>() / shared.len() as f64;
        (Some(s2), Some(s3))
    };
    let mut total = w.appearance * sa / w.scale_appearance;
    match (s2, s3) {
        (Some(s2), Some(s3)) => {
            let decay = ((1 + trk.age) as f64).powi(2);
            total += (w.pose2d * s2 / w.scale_pose2d + w.pose3d * s3 / w.scale_pose3d) / decay;
        }
        _ => total += w.missing_penalty,
    }
    Dissimilarity {
        appearance: sa,
        pose2d: s2,
        pose3d: s3,
        total,
    }
}

/// Minimum-cost one-to-one assignment on a rectangular cost matrix
/// (Hungarian method with potentials). Returns, per row, the matched column.
/// Every row is matched when rows ≤ columns, otherwise every column.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n_rows = cost.len();
    let n_cols = cost.first().map_or(0, Vec::len);
    if n_rows == 0 || n_cols == 0 {
        return vec![None; n_rows];
    }
    let transposed = n_rows > n_cols;
    let (n, m) = if transposed { (n_cols, n_rows) } else { (n_rows, n_cols) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n_rows];
    for j in 1..=m {
        if p[j] != 0 {
            let (r, c) = if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
            out[r] = Some(c);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub weights: DissimilarityWeights,
    /// Pairs costing more than this stay unmatched.
    pub threshold: f64,
    /// Frames an unseen track stays re-identifiable.
    pub retention_frames: usize,
    /// Seconds between appearance refreshes; `None` disables refresh.
    pub refresh_seconds: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            weights: DissimilarityWeights::default(),
            threshold: 50.0,
            retention_frames: 90,
            refresh_seconds: Some(30.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub appearance: Option<AppearanceHist>,
    pub pixels: [Vector2<f64>; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
    pub p3d: Pose3D,
    pub frames_since_seen: usize,
    pub created_at: f64,
    pub last_refresh: f64,
}

impl Track {
    fn summary(&self) -> TrackSummary<'_> {
        TrackSummary {
            pixels: &self.pixels,
            visible: &self.visible,
            p3d: &self.p3d,
            appearance: self.appearance.as_ref(),
            age: self.frames_since_seen,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrackEvent {
    Created { frame: usize, id: u64 },
    Matched { frame: usize, id: u64, cost: f64 },
    Occluded { frame: usize, id: u64, frames_since_seen: usize },
    Dropped { frame: usize, id: u64 },
    Reinitialized { frame: usize, id: u64 },
}

/// Track table; one instance per video stream.
#[derive(Clone, Debug, Default)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub tracks: Vec<Track>,
    next_id: u64,
    pub events: Vec<TrackEvent>,
}

/// Detection order used for assignment, independent of input order:
/// lexicographic over joint pixel coordinates.
fn canonical_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[a]
            .pixels
            .iter()
            .zip(&dets[b].pixels)
            .map(|(p, q)| p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn track(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Matches this frame's detections to tracks; returns the id assigned to
    /// each detection, in input order.
    pub fn step(&mut self, frame: usize, time: f64, dets: &[Detection]) -> Vec<u64> {
        let order = canonical_order(dets);
        let cost: Vec<Vec<f64>> = order
            .iter()
            .map(|&d| {
                self.tracks
                    .iter()
                    .map(|t| dissimilarity(&dets[d], &t.summary(), &self.config.weights).total)
                    .collect()
            })
            .collect();
        // Capping at the threshold makes leaving a pair unmatched as cheap as
        // the worst acceptable match.
        let capped: Vec<Vec<f64>> = cost
            .iter()
            .map(|r| r.iter().map(|c| c.min(self.config.threshold)).collect())
            .collect();
        let assignment = hungarian(&capped);

        let mut ids = vec![0u64; dets.len()];
        let mut matched_tracks = vec![false; self.tracks.len()];
        for (k, &d) in order.iter().enumerate() {
            let det = &dets[d];
            match assignment[k].filter(|&t| cost[k][t] <= self.config.threshold) {
                Some(t) => {
                    matched_tracks[t] = true;
                    let tr = &mut self.tracks[t];
                    tr.pixels = det.pixels;
                    tr.visible = det.visible;
                    tr.p3d = det.p3d;
                    tr.frames_since_seen = 0;
                    if let (Some(period), Some(a)) = (self.config.refresh_seconds, &det.appearance) {
                        if tr.appearance.is_none() || time - tr.last_refresh >= period {
                            tr.appearance = Some(a.clone());
                            tr.last_refresh = time;
                        }
                    }
                    ids[d] = tr.id;
                    self.events.push(TrackEvent::Matched {
                        frame,
                        id: tr.id,
                        cost: cost[k][t],
                    });
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.tracks.push(Track {
                        id,
                        appearance: det.appearance.clone(),
                        pixels: det.pixels,
                        visible: det.visible,
                        p3d: det.p3d,
                        frames_since_seen: 0,
                        created_at: time,
                        last_refresh: time,
                    });
                    matched_tracks.push(true);
                    ids[d] = id;
                    self.events.push(TrackEvent::Created { frame, id });
                }
            }
        }

        let retention = self.config.retention_frames;
        let mut kept = Vec::with_capacity(self.tracks.len());
        for (t, mut tr) in std::mem::take(&mut self.tracks).into_iter().enumerate() {
            if !matched_tracks[t] {
                tr.frames_since_seen += 1;
                if tr.frames_since_seen > retention {
                    self.events.push(TrackEvent::Dropped { frame, id: tr.id });
                    continue;
                }
                self.events.push(TrackEvent::Occluded {
                    frame,
                    id: tr.id,
                    frames_since_seen: tr.frames_since_seen,
                });
            }
            kept.push(tr);
        }
        self.tracks = kept;
        ids
    }

    /// Forgets a track so its subject is detected afresh.
    pub fn reinitialize(&mut self, frame: usize, id: u64) {
        self.tracks.retain(|t| t.id != id);
        self.events.push(TrackEvent::Reinitialized { frame, id });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Solid(f64, f64, u32, u32);
    impl HsSource for Solid {
        fn width(&self) -> u32 {
            self.2
        }
        fn height(&self) -> u32 {
            self.3
        }
        fn sample(&self, _: u32, _: u32) -> (f64, f64) {
            (self.0, self.1)
        }
    }

    struct Split;
    impl HsSource for Split {
        fn width(&self) -> u32 {
            20
        }
        fn height(&self) -> u32 {
            10
        }
        fn sample(&self, x: u32, y: u32) -> (f64, f64) {
            (((x * 7 + y * 3) % 30) as f64 / 30.0, if x < 8 { 0.2 } else { 0.9 })
        }
    }

    #[test]
    fn uniform_torso_single_bin() {
        let h = compute_appearance(&Solid(0.41, 0.7, 50, 50), &BBox { x0: 3, y0: 4, x1: 20, y1: 30 }).unwrap();
        let nz: Vec<_> = h.0.iter().filter(|v| **v > 0.0).collect();
        assert_eq!(nz, vec![&1.0]);
        assert_eq!(h.0[12 * HIST_BINS + 21], 1.0);
    }

    #[test]
    fn empty_bbox_is_an_error() {
        let src = Solid(0.1, 0.1, 10, 10);
        assert!(compute_appearance(&src, &BBox { x0: 5, y0: 0, x1: 5, y1: 4 }).is_err());
    }

    #[test]
    fn histogram_is_area_weighted_mean_of_parts() {
        let whole = BBox { x0: 0, y0: 0, x1: 20, y1: 10 };
        let left = BBox { x0: 0, y0: 0, x1: 6, y1: 10 };
        let right = BBox { x0: 6, y0: 0, x1: 20, y1: 10 };
        let (hw, hl, hr) = (
            compute_appearance(&Split, &whole).unwrap(),
            compute_appearance(&Split, &left).unwrap(),
            compute_appearance(&Split, &right).unwrap(),
        );
        let (al, ar) = (left.area() as f64, right.area() as f64);
        for i in 0..hw.0.len() {
            let mixed = (hl.0[i] * al + hr.0[i] * ar) / (al + ar);
            assert!((hw.0[i] - mixed).abs() < 1e-12);
        }
        assert!((hw.sum() - 1.0).abs() < 1e-12);
    }

    fn random_detection(rng: &mut ChaCha8Rng) -> Detection {
        let mut pixels = [Vector2::zeros(); NUM_JOINTS];
        let mut p3d = [nalgebra::Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            pixels[j] = Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..320.0));
            p3d[j] = nalgebra::Vector3::new(rng.random(), rng.random(), rng.random());
        }
        let samples: Vec<(f64, f64)> = (0..50).map(|_| (rng.random(), rng.random())).collect();
        Detection {
            pixels,
            visible: [true; NUM_JOINTS],
            p3d,
            appearance: Some(AppearanceHist::from_samples(samples).unwrap()),
        }
    }

    fn summary_of(d: &Detection) -> TrackSummary<'_> {
        TrackSummary {
            pixels: &d.pixels,
            visible: &d.visible,
            p3d: &d.p3d,
            appearance: d.appearance.as_ref(),
            age: 0,
        }
    }

    #[test]
    fn identical_inputs_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_detection(&mut rng);
        assert_eq!(dissimilarity(&d, &summary_of(&d), &DissimilarityWeights::default()).total, 0.0);
    }

    #[test]
    fn no_overlap_falls_back_to_appearance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = random_detection(&mut rng);
        let mut b = random_detection(&mut rng);
        a.visible = [false; NUM_JOINTS];
        a.visible[0] = true;
        b.visible = [true; NUM_JOINTS];
        b.visible[0] = false;
        let w = DissimilarityWeights::default();
        let s = dissimilarity(&a, &summary_of(&b), &w);
        assert!(s.pose2d.is_none() && s.pose3d.is_none());
        let sa = a.appearance.as_ref().unwrap().distance(b.appearance.as_ref().unwrap());
        assert!((s.total - (sa / w.scale_appearance + w.missing_penalty)).abs() < 1e-12);
    }

    #[test]
    fn weights_scale_components_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_detection(&mut rng), random_detection(&mut rng));
        let w = DissimilarityWeights::default();
        let s = dissimilarity(&a, &summary_of(&b), &w);
        let w2 = DissimilarityWeights {
            appearance: 2.0,
            pose2d: 3.0,
            pose3d: 0.5,
            ..w.clone()
        };
        let s2 = dissimilarity(&a, &summary_of(&b), &w2);
        let expect = 2.0 * s.appearance / w.scale_appearance
            + 3.0 * s.pose2d.unwrap() / w.scale_pose2d
            + 0.5 * s.pose3d.unwrap() / w.scale_pose3d;
        assert!((s2.total - expect).abs() < 1e-9 * expect);
    }

    /// Exhaustive minimum over injective maps from the smaller side.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let (n, m) = (cost.len(), cost[0].len());
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, transposed: bool) -> f64 {
            let (n, m) = if transposed { (cost[0].len(), cost.len()) } else { (cost.len(), cost[0].len()) };
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..m {
                if !used[c] {
                    used[c] = true;
                    let v = if transposed { cost[c][row] } else { cost[row][c] };
                    best = best.min(v + rec(cost, row + 1, used, transposed));
                    used[c] = false;
                }
            }
            best
        }
        let transposed = n > m;
        rec(cost, 0, &mut vec![false; n.max(m)], transposed)
    }

    fn assignment_cost(cost: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(r, c)| c.map(|c| cost[r][c])).sum()
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let a = hungarian(&cost);
            let cols: Vec<_> = a.iter().flatten().collect();
            assert_eq!(cols.len(), n.min(m));
            let mut dedup = cols.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), cols.len());
            assert!((assignment_cost(&cost, &a) - brute_force(&cost)).abs() < 1e-9);
        }
    }

    fn shifted(d: &Detection, dx: f64) -> Detection {
        let mut o = d.clone();
        o.pixels.iter_mut().for_each(|p| p.x += dx);
        o
    }

    fn two_people(rng: &mut ChaCha8Rng) -> (Detection, Detection) {
        let mut a = random_detection(rng);
        let mut b = random_detection(rng);
        a.appearance = Some(AppearanceHist::from_samples([(0.1, 0.8)]).unwrap());
        b.appearance = Some(AppearanceHist::from_samples([(0.6, 0.8)]).unwrap());
        a.pixels.iter_mut().for_each(|p| p.x = p.x * 0.2 + 50.0);
        b.pixels.iter_mut().for_each(|p| p.x = p.x * 0.2 + 350.0);
        (a, b)
    }

    #[test]
    fn empty_frame_ages_tracks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = two_people(&mut rng);
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(0, 0.0, &[a, b]);
        t.step(1, 1.0 / 30.0, &[]);
        assert!(t.tracks.iter().all(|tr| tr.frames_since_seen == 1));
    }

    #[test]
    fn retention_boundary_is_ninety_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, _) = two_people(&mut rng);
        for (gap, same) in [(90, true), (91, false)] {
            let mut t = Tracker::new(TrackerConfig::default());
            let id = t.step(0, 0.0, std::slice::from_ref(&a))[0];
            for f in 1..=gap {
                t.step(f, f as f64 / 30.0, &[]);
            }
            let f = gap + 1;
            let back = t.step(f, f as f64 / 30.0, std::slice::from_ref(&a))[0];
            assert_eq!(back == id, same, "gap {gap}");
        }
    }

    #[test]
    fn refresh_replaces_after_thirty_seconds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, _) = two_people(&mut rng);
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(0, 0.0, std::slice::from_ref(&a));
        let mut b = a.clone();
        b.appearance = Some(AppearanceHist::from_samples([(0.1, 0.8), (0.12, 0.8)]).unwrap());
        t.step(1, 29.9, &[b.clone()]);
        assert_eq!(t.tracks[0].appearance, a.appearance);
        t.step(2, 30.0, &[b.clone()]);
        assert_eq!(t.tracks[0].appearance, b.appearance);
        assert_eq!(t.tracks[0].last_refresh, 30.0);
    }

    #[test]
    fn swapped_input_order_keeps_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b) = two_people(&mut rng);
        let mut t = Tracker::new(TrackerConfig::default());
        let ids = t.step(0, 0.0, &[a.clone(), b.clone()]);
        let ids2 = t.step(1, 1.0 / 30.0, &[shifted(&b, 2.0), shifted(&a, 2.0)]);
        assert_eq!(ids2, vec![ids[1], ids[0]]);
    }

    proptest! {
        #[test]
        fn assignment_has_set_semantics(seed in 0u64..500, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let first: Vec<Detection> = (0..n).map(|_| random_detection(&mut rng)).collect();
            let next: Vec<Detection> = first.iter().map(|d| shifted(d, rng.random_range(-3.0..3.0))).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let run = |dets: &[Detection]| {
                let mut t = Tracker::new(TrackerConfig::default());
                t.step(0, 0.0, &first);
                t.step(1, 0.1, dets)
            };
            let base = run(&next);
            let permuted: Vec<Detection> = perm.iter().map(|&i| next[i].clone()).collect();
            let ids = run(&permuted);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(ids[k], base[i]);
            }
            let mut uniq = base.clone();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), n);
        }
    }
}
