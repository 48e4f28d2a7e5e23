//! Per-frame feature construction and unsupervised labelling.
//!
//! Each frame becomes a 2-D point `(dist, ewma)`: the instantaneous corner
//! displacement and its exponentially weighted average over the trailing
//! second. Two-cluster k-means then splits the points, and the cluster
//! farther from the origin is labelled "on".

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_SEED: u64 = 42;
/// Accepted range of `count(on) / count(off)`.
pub const BALANCE_RANGE: (f64, f64) = (0.2, 5.0);

/// `Dist` values keyed by frame index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistSeries {
    values: Vec<(u64, f64)>,
}

impl DistSeries {
    pub fn new(values: Vec<(u64, f64)>) -> Result<Self> {
        if values.windows(2).any(|p| p[1].0 <= p[0].0) {
            return invalid("frame indices must be strictly increasing");
        }
        if values.iter().any(|v| !v.1.is_finite() || v.1 < 0.0) {
            return invalid("dist values must be finite and non-negative");
        }
        Ok(Self { values })
    }

    /// Series indexed `0, 1, 2, …`.
    pub fn from_dists(dists: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(dists.into_iter().enumerate().map(|(i, d)| (i as u64, d)).collect())
    }

    pub fn values(&self) -> &[(u64, f64)] {
        &self.values
    }

    pub fn dists(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|v| v.1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwmaParams {
    pub alpha: f64,
    pub window_t: usize,
}

impl EwmaParams {
    /// One second of frames, `alpha = 2 / (fps + 1)`.
    pub fn from_fps(fps: u16) -> Result<Self> {
        Self::from_window(fps as usize)
    }

    /// Span-`t` smoothing: `alpha = 2 / (t + 1)`.
    pub fn from_window(window_t: usize) -> Result<Self> {
        if window_t == 0 {
            return invalid("EWMA window must be at least one frame");
        }
        Ok(Self {
            alpha: 2.0 / (window_t as f64 + 1.0),
            window_t,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_t == 0 || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("invalid EWMA parameters {self:?}"));
        }
        Ok(())
    }
}

/// Weighted average of `window` (oldest first) with weight `(1−α)^k` on the
/// value `k` steps before the newest.
pub fn ewma_slice(window: &[f64], alpha: f64) -> f64 {
    let decay = 1.0 - alpha;
    let (mut num, mut den, mut w) = (0.0, 0.0, 1.0);
    for &x in window.iter().rev() {
        num += w * x;
        den += w;
        w *= decay;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// EWMA over the trailing `window_t` entries ending at frame `at`. The
/// window is truncated at the start of the series.
pub fn ewma_window(series: &DistSeries, params: &EwmaParams, at: u64) -> Result<f64> {
    params.validate()?;
    let first = match series.values.first() {
        Some(v) => v.0,
        None => return invalid("EWMA of an empty series"),
    };
    if at < first {
        return invalid(format!("frame {at} precedes the series start {first}"));
    }
    let end = series.values.partition_point(|v| v.0 <= at);
    let start = end.saturating_sub(params.window_t);
    let window: Vec<f64> = series.values[start..end].iter().map(|v| v.1).collect();
    Ok(ewma_slice(&window, params.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint {
    pub frame: u64,
    pub dist: f64,
    pub ewma: f64,
    pub label: Option<u8>,
}

impl FeaturePoint {
    pub fn xy(&self) -> [f64; 2] {
        [self.dist, self.ewma]
    }
}

/// One point per frame: `(dist, ewma)`.
pub fn build_dataset(series: &DistSeries, params: &EwmaParams) -> Result<Vec<FeaturePoint>> {
    params.validate()?;
    if series.len() <= params.window_t {
        return invalid(format!(
            "series of {} frames is too short for a {}-frame window",
            series.len(),
            params.window_t
        ));
    }
    let dists: Vec<f64> = series.dists().collect();
    Ok(series
        .values
        .iter()
        .enumerate()
        .map(|(i, &(frame, dist))| {
            let start = (i + 1).saturating_sub(params.window_t);
            FeaturePoint {
                frame,
                dist,
                ewma: ewma_slice(&dists[start..=i], params.alpha),
                label: None,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster index per point.
    pub labels: Vec<u8>,
    pub centroids: [[f64; 2]; 2],
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

const KMEANS_MAX_ITER: usize = 300;
const KMEANS_TOL: f64 = 1e-6;
const KMEANS_RESTARTS: usize = 10;

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn assign(points: &[[f64; 2]], c: &[[f64; 2]; 2], labels: &mut [u8]) -> f64 {
    let mut inertia = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (d0, d1) = (dist2(*p, c[0]), dist2(*p, c[1]));
        // Ties go to the lower index.
        if d1 < d0 {
            *l = 1;
            inertia += d1;
        } else {
            *l = 0;
            inertia += d0;
        }
    }
    inertia
}

fn means(points: &[[f64; 2]], labels: &[u8]) -> [Option<[f64; 2]>; 2] {
    let mut sum = [[0.0; 2]; 2];
    let mut n = [0usize; 2];
    for (p, &l) in points.iter().zip(labels) {
        let l = l as usize;
        sum[l][0] += p[0];
        sum[l][1] += p[1];
        n[l] += 1;
    }
    [0, 1].map(|k| (n[k] > 0).then(|| [sum[k][0] / n[k] as f64, sum[k][1] / n[k] as f64]))
}

fn plus_plus_init(points: &[[f64; 2]], rng: &mut ChaCha8Rng) -> [[f64; 2]; 2] {
    let first = points[rng.random_range(0..points.len())];
    let d: Vec<f64> = points.iter().map(|p| dist2(*p, first)).collect();
    let total: f64 = d.iter().sum();
    let mut r = rng.random::<f64>() * total;
    let mut second = *points.iter().rev().find(|p| dist2(**p, first) > 0.0).unwrap();
    for (p, &w) in points.iter().zip(&d) {
        if w > 0.0 && r < w {
            second = *p;
            break;
        }
        r -= w;
    }
    [first, second]
}

fn lloyd(points: &[[f64; 2]], mut c: [[f64; 2]; 2]) -> KMeans {
    let mut labels = vec![0u8; points.len()];
    let mut trace = Vec::new();
    let mut inertia = assign(points, &c, &mut labels);
    trace.push(inertia);
    for _ in 0..KMEANS_MAX_ITER {
        let m = means(points, &labels);
        let mut next = c;
        for k in 0..2 {
            next[k] = match m[k] {
                Some(v) => v,
                // Empty cluster: move it to the worst-served point.
                None => *points
                    .iter()
                    .max_by(|a, b| dist2(**a, c[1 - k]).total_cmp(&dist2(**b, c[1 - k])))
                    .unwrap(),
            };
        }
        let shift = dist2(next[0], c[0]).sqrt().max(dist2(next[1], c[1]).sqrt());
        c = next;
        inertia = assign(points, &c, &mut labels);
        trace.push(inertia);
        if shift < KMEANS_TOL {
            break;
        }
    }
    let (c, refined) = hartigan(points, &mut labels, c);
    if refined {
        inertia = assign_fixed(points, &c, &labels);
        trace.push(inertia);
    }
    KMeans {
        labels,
        centroids: c,
        inertia,
        inertia_trace: trace,
    }
}

fn assign_fixed(points: &[[f64; 2]], c: &[[f64; 2]; 2], labels: &[u8]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| dist2(*p, c[l as usize])).sum()
}

/// Single-point transfers that lower the inertia, applied until none is
/// left. Returns the updated centroids and whether anything moved.
fn hartigan(points: &[[f64; 2]], labels: &mut [u8], c: [[f64; 2]; 2]) -> ([[f64; 2]; 2], bool) {
    let mut n = [0usize; 2];
    let mut sum = [[0.0; 2]; 2];
    for (p, &l) in points.iter().zip(labels.iter()) {
        n[l as usize] += 1;
        sum[l as usize][0] += p[0];
        sum[l as usize][1] += p[1];
    }
    if n[0] == 0 || n[1] == 0 {
        return (c, false);
    }
    let mean = |k: usize, sum: &[[f64; 2]; 2], n: &[usize; 2]| [sum[k][0] / n[k] as f64, sum[k][1] / n[k] as f64];
    let mut moved_any = false;
    for _ in 0..KMEANS_MAX_ITER {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = labels[i] as usize;
            let b = 1 - a;
            if n[a] <= 1 {
                continue;
            }
            let (ca, cb) = (mean(a, &sum, &n), mean(b, &sum, &n));
            let gain = n[a] as f64 / (n[a] - 1) as f64 * dist2(*p, ca);
            let cost = n[b] as f64 / (n[b] + 1) as f64 * dist2(*p, cb);
            if cost < gain * (1.0 - 1e-12) {
                labels[i] = b as u8;
                n[a] -= 1;
                n[b] += 1;
                sum[a][0] -= p[0];
                sum[a][1] -= p[1];
                sum[b][0] += p[0];
                sum[b][1] += p[1];
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    if !moved_any {
        return (c, false);
    }
    // Recompute from scratch to shed accumulated rounding.
    let m = means(points, labels);
    ([m[0].unwrap(), m[1].unwrap()], true)
}

/// Two-cluster k-means with k-means++ seeding; the best of several seeded
/// restarts is kept.
pub fn kmeans2(points: &[[f64; 2]], seed: u64) -> Result<KMeans> {
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return invalid("k-means input must be finite");
    }
    if points.len() < 2 || points.iter().all(|p| *p == points[0]) {
        return Err(Error::DegenerateClustering);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(points, plus_plus_init(points, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Labels the cluster whose centroid is farther from the origin `1`.
pub fn label_by_origin(labels: &[u8], centroids: &[[f64; 2]; 2], points: &[FeaturePoint]) -> Result<Vec<FeaturePoint>> {
    if labels.len() != points.len() {
        return invalid(format!("{} labels for {} points", labels.len(), points.len()));
    }
    if labels.iter().any(|&l| l > 1) {
        return invalid("cluster labels must be 0 or 1");
    }
    let norm = |c: [f64; 2]| c[0].hypot(c[1]);
    let (n0, n1) = (norm(centroids[0]), norm(centroids[1]));
    if n0 == n1 {
        return Err(Error::IndistinguishableStates);
    }
    let on = if n1 > n0 { 1 } else { 0 };
    Ok(points
        .iter()
        .zip(labels)
        .map(|(p, &l)| FeaturePoint {
            label: Some((l == on) as u8),
            ..*p
        })
        .collect())
}

/// `count(label 1) / count(label 0)`; `0` or `∞` when a class is empty.
pub fn balance_check(points: &[FeaturePoint]) -> f64 {
    let on = points.iter().filter(|p| p.label == Some(1)).count();
    let off = points.iter().filter(|p| p.label == Some(0)).count();
    match (on, off) {
        (0, _) => 0.0,
        (_, 0) => f64::INFINITY,
        _ => on as f64 / off as f64,
    }
}

pub fn balance_ok(ratio: f64) -> bool {
    (BALANCE_RANGE.0..=BALANCE_RANGE.1).contains(&ratio)
}

/// `|N_negative − open_frame| / n_frames`.
pub fn class_coefficient(points: &[FeaturePoint], open_frame: u64, n_frames: usize) -> f64 {
    if n_frames == 0 {
        return 0.0;
    }
    let negative = points.iter().filter(|p| p.label == Some(0)).count() as f64;
    (negative - open_frame as f64).abs() / n_frames as f64
}

/// Writes `frame,dist,ewma,label` rows; unlabelled points leave the last
/// column empty.
pub fn write_csv<W: Write>(points: &[FeaturePoint], mut out: W) -> Result<()> {
    writeln!(out, "frame,dist,ewma,label")?;
    for p in points {
        match p.label {
            Some(l) => writeln!(out, "{},{},{},{l}", p.frame, p.dist, p.ewma)?,
            None => writeln!(out, "{},{},{},", p.frame, p.dist, p.ewma)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(frame: u64, dist: f64, ewma: f64) -> FeaturePoint {
        FeaturePoint {
            frame,
            dist,
            ewma,
            label: None,
        }
    }

    #[test]
    fn ewma_fixture() {
        let s = DistSeries::from_dists([0.0, 0.0, 10.0]).unwrap();
        let p = EwmaParams {
            alpha: 0.5,
            window_t: 3,
        };
        let v = ewma_window(&s, &p, 2).unwrap();
        assert!((v - 10.0 / 1.75).abs() < 1e-12);
        assert!((v - 5.714285714285714).abs() < 1e-12);
    }

    #[test]
    fn ewma_unit_window_is_identity() {
        let s = DistSeries::from_dists([3.0, 1.0, 4.0, 1.5]).unwrap();
        let p = EwmaParams::from_window(1).unwrap();
        for (i, d) in s.dists().enumerate() {
            assert_eq!(ewma_window(&s, &p, i as u64).unwrap(), d);
        }
    }

    #[test]
    fn ewma_rejects_empty_and_early_frames() {
        let p = EwmaParams::from_fps(25).unwrap();
        assert!(ewma_window(&DistSeries::default(), &p, 0).is_err());
        let s = DistSeries::new(vec![(5, 1.0)]).unwrap();
        assert!(ewma_window(&s, &p, 4).is_err());
    }

    #[test]
    fn ewma_params_from_fps() {
        let p = EwmaParams::from_fps(25).unwrap();
        assert_eq!(p.window_t, 25);
        assert!((p.alpha - 2.0 / 26.0).abs() < 1e-15);
        assert!(EwmaParams::from_fps(0).is_err());
    }

    #[test]
    fn series_rejects_bad_input() {
        assert!(DistSeries::new(vec![(1, 0.0), (1, 0.0)]).is_err());
        assert!(DistSeries::new(vec![(0, -1.0)]).is_err());
    }

    #[test]
    fn dataset_has_one_point_per_frame() {
        let s = DistSeries::from_dists(vec![0.0; 40]).unwrap();
        let d = build_dataset(&s, &EwmaParams::from_fps(25).unwrap()).unwrap();
        assert_eq!(d.len(), 40);
        assert!(d.iter().all(|p| p.dist == 0.0 && p.ewma == 0.0));
        let short = DistSeries::from_dists(vec![0.0; 25]).unwrap();
        assert!(build_dataset(&short, &EwmaParams::from_fps(25).unwrap()).is_err());
    }

    fn silhouette(points: &[[f64; 2]], labels: &[u8]) -> f64 {
        let n = points.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut sum = [0.0; 2];
            let mut cnt = [0usize; 2];
            for j in 0..n {
                if i != j {
                    sum[labels[j] as usize] += dist2(points[i], points[j]).sqrt();
                    cnt[labels[j] as usize] += 1;
                }
            }
            let own = labels[i] as usize;
            let a = sum[own] / cnt[own].max(1) as f64;
            let b = sum[1 - own] / cnt[1 - own].max(1) as f64;
            total += (b - a) / a.max(b);
        }
        total / n as f64
    }

    #[test]
    fn off_then_on_series_separates() {
        let dists: Vec<f64> = (0..200)
            .map(|i| {
                if i < 100 {
                    0.05 * (i % 3) as f64
                } else {
                    8.0 + (i % 5) as f64 * 0.3
                }
            })
            .collect();
        let d = build_dataset(
            &DistSeries::from_dists(dists).unwrap(),
            &EwmaParams::from_fps(25).unwrap(),
        )
        .unwrap();
        let xy: Vec<[f64; 2]> = d.iter().map(FeaturePoint::xy).collect();
        let km = kmeans2(&xy, DEFAULT_SEED).unwrap();
        assert!(silhouette(&xy, &km.labels) > 0.7);
        let labelled = label_by_origin(&km.labels, &km.centroids, &d).unwrap();
        assert_eq!(labelled[0].label, Some(0));
        assert_eq!(labelled[199].label, Some(1));
    }

    #[test]
    fn kmeans_two_blobs() {
        let mut pts = vec![[0.0, 0.0]; 10];
        pts.extend(vec![[10.0, 10.0]; 10]);
        let km = kmeans2(&pts, 42).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut c = km.centroids.to_vec();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![[0.0, 0.0], [10.0, 10.0]]);
    }

    #[test]
    fn kmeans_degenerate() {
        assert!(matches!(kmeans2(&[[1.0, 1.0]; 5], 1), Err(Error::DegenerateClustering)));
        assert!(matches!(kmeans2(&[[1.0, 1.0]], 1), Err(Error::DegenerateClustering)));
    }

    #[test]
    fn label_by_origin_cases() {
        let pts = [pt(0, 0.1, 0.1), pt(1, 8.0, 8.0)];
        let c = [[0.1, 0.1], [8.0, 8.0]];
        let l = label_by_origin(&[0, 1], &c, &pts).unwrap();
        assert_eq!((l[0].label, l[1].label), (Some(0), Some(1)));
        let swapped = label_by_origin(&[1, 0], &[c[1], c[0]], &pts).unwrap();
        assert_eq!(l, swapped);
        assert!(matches!(
            label_by_origin(&[0, 1], &[[3.0, 4.0], [4.0, 3.0]], &pts),
            Err(Error::IndistinguishableStates)
        ));
    }

    fn labelled(on: usize, off: usize) -> Vec<FeaturePoint> {
        (0..on + off)
            .map(|i| FeaturePoint {
                label: Some((i < on) as u8),
                ..pt(i as u64, 0.0, 0.0)
            })
            .collect()
    }

    #[test]
    fn balance_cases() {
        assert_eq!(balance_check(&labelled(100, 100)), 1.0);
        assert!(balance_ok(1.0));
        let r = balance_check(&labelled(10, 100));
        assert_eq!(r, 0.1);
        assert!(!balance_ok(r));
        let r = balance_check(&labelled(300, 100));
        assert_eq!(r, 3.0);
        assert!(balance_ok(r));
        assert_eq!(balance_check(&labelled(0, 5)), 0.0);
        assert_eq!(balance_check(&labelled(5, 0)), f64::INFINITY);
        assert!(!balance_ok(f64::INFINITY));
    }

    #[test]
    fn class_coefficient_fixture() {
        let cr = class_coefficient(&labelled(335, 100), 110, 435);
        assert!((cr - 10.0 / 435.0).abs() < 1e-15);
        assert!((cr - 0.02299).abs() < 1e-5);
    }

    #[test]
    fn csv_has_header_and_one_row_per_point() {
        let mut buf = Vec::new();
        write_csv(&labelled(2, 1), &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "frame,dist,ewma,label");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,0,0,1");
    }

    proptest! {
        #[test]
        fn ewma_is_convex_and_shift_equivariant(
            xs in prop::collection::vec(0.0f64..100.0, 1..60),
            t in 1usize..30,
            c in 0.0f64..50.0,
        ) {
            let p = EwmaParams::from_window(t).unwrap();
            let s = DistSeries::from_dists(xs.clone()).unwrap();
            let shifted = DistSeries::from_dists(xs.iter().map(|x| x + c)).unwrap();
            for at in 0..xs.len() {
                let lo = at + 1 - (at + 1).min(t);
                let w = &xs[lo..=at];
                let v = ewma_window(&s, &p, at as u64).unwrap();
                let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= min - 1e-9 && v <= max + 1e-9);
                let vs = ewma_window(&shifted, &p, at as u64).unwrap();
                prop_assert!((vs - (v + c)).abs() <= 1e-9 * (1.0 + vs.abs()));
            }
        }

        #[test]
        fn kmeans_inertia_is_monotone(pts in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..40), seed in any::<u64>()) {
            let xy: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
            prop_assume!(xy.iter().any(|p| *p != xy[0]));
            let km = kmeans2(&xy, seed).unwrap();
            for w in km.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
        }

        #[test]
        fn labelling_ignores_cluster_order(pts in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 4..30)) {
            let fp: Vec<FeaturePoint> = pts.iter().enumerate().map(|(i, p)| pt(i as u64, p.0, p.1)).collect();
            let xy: Vec<[f64; 2]> = fp.iter().map(FeaturePoint::xy).collect();
            prop_assume!(xy.iter().any(|p| *p != xy[0]));
            let km = kmeans2(&xy, 42).unwrap();
            let flipped: Vec<u8> = km.labels.iter().map(|l| 1 - l).collect();
            let a = label_by_origin(&km.labels, &km.centroids, &fp);
            let b = label_by_origin(&flipped, &[km.centroids[1], km.centroids[0]], &fp);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn pipeline_is_deterministic(xs in prop::collection::vec(0.0f64..10.0, 30..80), seed in any::<u64>()) {
            let s = DistSeries::from_dists(xs).unwrap();
            let p = EwmaParams::from_window(5).unwrap();
            let run = || {
                let d = build_dataset(&s, &p).unwrap();
                let xy: Vec<[f64; 2]> = d.iter().map(FeaturePoint::xy).collect();
                kmeans2(&xy, seed).ok().map(|km| label_by_origin(&km.labels, &km.centroids, &d).ok())
            };
            prop_assert_eq!(run(), run());
        }
    }
}
