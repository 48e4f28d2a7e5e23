//! Brute-force references and the randomized batteries that compare the
//! library against them. Shared by the core oracle tests and the acceptance
//! suite.

use aerator_core::classifier::{svm_predict, svm_train};
use aerator_core::features::{ewma_window, kmeans2, DistSeries, EwmaParams, FeaturePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn partition_inertia(points: &[[f64; 2]], mask: u32) -> f64 {
    let mut total = 0.0;
    for side in [0u32, 1] {
        let members: Vec<[f64; 2]> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| (mask >> i) & 1 == side)
            .map(|(_, p)| *p)
            .collect();
        if members.is_empty() {
            return f64::INFINITY;
        }
        let n = members.len() as f64;
        let mx = members.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = members.iter().map(|p| p[1]).sum::<f64>() / n;
        total += members
            .iter()
            .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
            .sum::<f64>();
    }
    total
}

/// Smallest within-cluster sum of squares over every 2-partition.
pub fn exhaustive_min_inertia(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    // Point 0 is pinned to side 0, so every partition appears once.
    (0..1u32 << (n - 1))
        .map(|m| partition_inertia(points, m << 1))
        .fold(f64::INFINITY, f64::min)
}

/// Weighted mean of the trailing `t` values ending at `at`, weights
/// `(1 − α)^k` with `k` counting back from `at`.
pub fn ewma_direct(xs: &[f64], at: usize, t: usize, alpha: f64) -> f64 {
    let lo = (at + 1).saturating_sub(t);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, i) in (lo..=at).rev().enumerate() {
        let w = (1.0 - alpha).powi(k as i32);
        num += w * xs[i];
        den += w;
    }
    num / den
}

/// Max-margin separator over a grid of unit normals and offsets:
/// returns `(normal, offset, margin)` maximizing the smallest signed margin.
pub fn grid_max_margin(x: &[[f64; 2]], y: &[f64]) -> ([f64; 2], f64, f64) {
    let mut best = ([1.0, 0.0], 0.0, f64::NEG_INFINITY);
    let steps = (std::f64::consts::TAU / 0.01).ceil() as usize;
    for a in 0..steps {
        let th = a as f64 * 0.01;
        let n = [th.cos(), th.sin()];
        for o in -150..=150 {
            let off = o as f64 * 0.01;
            let m = x
                .iter()
                .zip(y)
                .map(|(p, yi)| yi * (n[0] * p[0] + n[1] * p[1] + off))
                .fold(f64::INFINITY, f64::min);
            if m > best.2 {
                best = (n, off, m);
            }
        }
    }
    best
}

/// 100 random sets of 2–12 points; k-means must reach the exhaustive minimum.
pub fn kmeans_battery() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let n: usize = rng.random_range(2..=12);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
            .collect();
        let km = kmeans2(&pts, 42).map_err(|e| format!("case {case}: {e}"))?;
        let best = exhaustive_min_inertia(&pts);
        if km.inertia > best * (1.0 + 1e-9) + 1e-12 {
            return Err(format!("case {case}: k-means {} vs exhaustive {best}", km.inertia));
        }
    }
    Ok("100/100 k-means cases at the exhaustive minimum".into())
}

/// 1000 random series; windowed EWMA against the direct weighted sum.
pub fn ewma_battery() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n: usize = rng.random_range(1..80);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let t: usize = rng.random_range(1..40);
        let p = EwmaParams::from_window(t).map_err(|e| e.to_string())?;
        let s = DistSeries::from_dists(xs.clone()).map_err(|e| e.to_string())?;
        let at = rng.random_range(0..n);
        let want = ewma_direct(&xs, at, t, p.alpha);
        let got = ewma_window(&s, &p, at as u64).map_err(|e| e.to_string())?;
        let rel = (got - want).abs() / want.abs().max(1e-300);
        worst = worst.max(rel);
        if rel > 1e-9 {
            return Err(format!("case {case}: {got} vs {want}"));
        }
    }
    Ok(format!("1000/1000 series, worst relative error {worst:.1e}"))
}

/// 50 separable 20-point sets; SVM labels must match the grid-search
/// max-margin separator's labels.
pub fn svm_battery() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let n = [th.cos(), th.sin()];
        let mut pts: Vec<FeaturePoint> = Vec::new();
        while pts.len() < 20 {
            let p = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            let s = n[0] * (p[0] - 5.0) + n[1] * (p[1] - 5.0);
            if s.abs() < 1.5 {
                continue;
            }
            let label = (s > 0.0) as u8;
            if pts.iter().filter(|q| q.label == Some(label)).count() >= 10 {
                continue;
            }
            pts.push(FeaturePoint {
                frame: pts.len() as u64,
                dist: p[0],
                ewma: p[1],
                label: Some(label),
            });
        }
        let model = svm_train(&pts, 1.0).map_err(|e| format!("case {case}: {e}"))?;
        let xs: Vec<[f64; 2]> = pts.iter().map(|p| model.scale_point(p.xy())).collect();
        let ys: Vec<f64> = pts
            .iter()
            .map(|p| if p.label == Some(1) { 1.0 } else { -1.0 })
            .collect();
        let (gn, go, gm) = grid_max_margin(&xs, &ys);
        if gm <= 0.0 {
            return Err(format!("case {case}: grid found no separator"));
        }
        for (p, s) in pts.iter().zip(&xs) {
            let grid_label = (gn[0] * s[0] + gn[1] * s[1] + go > 0.0) as u8;
            if svm_predict(&model, p).label != grid_label {
                return Err(format!("case {case}, frame {}: labels differ", p.frame));
            }
        }
    }
    Ok("50/50 separable sets agree with the grid separator".into())
}
