//! Reference-frame pyramidal Lucas-Kanade tracking and the `Dist` feature.
//!
//! Unlike a frame-to-frame KLT tracker, the template never moves: corners
//! are detected once in an off-state reference frame and every incoming
//! frame is matched against that reference's pyramid. A still machine
//! yields near-zero displacements; spray over the machine body drags the
//! matches away.
//!
//! Both pyramids are built over a fixed crop (`roi`) around the tracked
//! region rather than the whole frame. The crop covers the search radius
//! plus the LK window, so every sample the tracker can reach is inside it,
//! and per-frame cost no longer scales with video resolution.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imgproc::{build_pyramid, shi_tomasi, BBox, Corner, CornerParams, FloatImage, GrayImage, Pyramid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkParams {
    /// Window is `(2w+1) × (2w+1)`.
    pub window_half: usize,
    pub max_iters: usize,
    /// Stop when the update is shorter than this (pixels).
    pub epsilon: f32,
    /// Reject windows whose gradient matrix has a minimum eigenvalue below
    /// `min_eig_factor × window area`.
    pub min_eig_factor: f32,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            window_half: 7,
            max_iters: 30,
            epsilon: 0.01,
            min_eig_factor: 1e-4,
        }
    }
}

/// Result of the iterative solve at one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelFlow {
    pub d: (f32, f32),
    /// Sum of squared differences over the window at the final estimate.
    pub residual: f32,
    pub converged: bool,
}

impl LevelFlow {
    fn failed() -> Self {
        Self {
            d: (0.0, 0.0),
            residual: f32::INFINITY,
            converged: false,
        }
    }
}

/// Guess handed to the next finer level: `2 (g + d)`.
#[inline]
pub fn propagate_guess(g: (f32, f32), d: (f32, f32)) -> (f32, f32) {
    (2.0 * (g.0 + d.0), 2.0 * (g.1 + d.1))
}

/// Samples `(2w+1)²` values around `(x, y)` with one shared set of bilinear
/// weights. Out-of-image taps are clamped to the border.
fn sample_window(img: &FloatImage, x: f32, y: f32, w: usize, out: &mut [f32]) {
    let (iw, ih) = (img.width() as isize, img.height() as isize);
    let (fx, fy) = (x.floor(), y.floor());
    let (ax, ay) = (x - fx, y - fy);
    let (w00, w10, w01, w11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
    let (bx, by) = (fx as isize - w as isize, fy as isize - w as isize);
    let n = 2 * w + 1;
    let data = img.data();
    let stride = img.width();
    let inside = bx >= 0 && by >= 0 && bx + (n as isize) < iw && by + (n as isize) < ih;
    if inside {
        for j in 0..n {
            let r0 = (by as usize + j) * stride + bx as usize;
            let r1 = r0 + stride;
            let row = &mut out[j * n..(j + 1) * n];
            for (i, o) in row.iter_mut().enumerate() {
                *o = w00 * data[r0 + i] + w10 * data[r0 + i + 1] + w01 * data[r1 + i] + w11 * data[r1 + i + 1];
            }
        }
    } else {
        let px = |x: isize, y: isize| data[(y.clamp(0, ih - 1) * iw + x.clamp(0, iw - 1)) as usize];
        for j in 0..n as isize {
            for i in 0..n as isize {
                let (sx, sy) = (bx + i, by + j);
                out[(j * n as isize + i) as usize] =
                    w00 * px(sx, sy) + w10 * px(sx + 1, sy) + w01 * px(sx, sy + 1) + w11 * px(sx + 1, sy + 1);
            }
        }
    }
}

/// Iterative Lucas-Kanade at one level: finds `d` minimising the window SSD
/// between `reference` around `u` and `current` around `u + g + d`.
pub fn lk_at_level(
    reference: &FloatImage,
    current: &FloatImage,
    u: (f32, f32),
    g: (f32, f32),
    params: &LkParams,
) -> LevelFlow {
    let w = params.window_half;
    let n = 2 * w + 1;
    let (rw, rh) = (reference.width() as f32, reference.height() as f32);
    // Windows may hang over the border (taps are clamped); the point itself
    // must be inside. Small coarse levels would otherwise reject everything.
    if !(u.0 >= 0.0 && u.1 >= 0.0 && u.0 <= rw - 1.0 && u.1 <= rh - 1.0) {
        return LevelFlow::failed();
    }

    let mut tmpl = vec![0f32; n * n];
    sample_window(reference, u.0, u.1, w, &mut tmpl);
    let mut left = vec![0f32; n * n];
    let mut right = vec![0f32; n * n];
    let mut ix = vec![0f32; n * n];
    let mut iy = vec![0f32; n * n];
    sample_window(reference, u.0 - 1.0, u.1, w, &mut left);
    sample_window(reference, u.0 + 1.0, u.1, w, &mut right);
    for k in 0..n * n {
        ix[k] = (right[k] - left[k]) * 0.5;
    }
    sample_window(reference, u.0, u.1 - 1.0, w, &mut left);
    sample_window(reference, u.0, u.1 + 1.0, w, &mut right);
    for k in 0..n * n {
        iy[k] = (right[k] - left[k]) * 0.5;
    }

    let (mut gxx, mut gxy, mut gyy) = (0f64, 0f64, 0f64);
    for k in 0..n * n {
        gxx += (ix[k] * ix[k]) as f64;
        gxy += (ix[k] * iy[k]) as f64;
        gyy += (iy[k] * iy[k]) as f64;
    }
    let min_eig = ((gxx + gyy) - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt()) / 2.0;
    if min_eig < (params.min_eig_factor * (n * n) as f32) as f64 {
        return LevelFlow::failed();
    }
    let det = gxx * gyy - gxy * gxy;

    let (cw, ch) = (current.width() as f32, current.height() as f32);
    let mut d = (0f32, 0f32);
    let mut warped = vec![0f32; n * n];
    for _ in 0..params.max_iters {
        let v = (u.0 + g.0 + d.0, u.1 + g.1 + d.1);
        if !(v.0 >= 0.0 && v.1 >= 0.0 && v.0 <= cw - 1.0 && v.1 <= ch - 1.0) {
            return LevelFlow::failed();
        }
        sample_window(current, v.0, v.1, w, &mut warped);
        let (mut bx, mut by) = (0f64, 0f64);
        for k in 0..n * n {
            let diff = (tmpl[k] - warped[k]) as f64;
            bx += diff * ix[k] as f64;
            by += diff * iy[k] as f64;
        }
        let eta = (
            ((gyy * bx - gxy * by) / det) as f32,
            ((gxx * by - gxy * bx) / det) as f32,
        );
        d.0 += eta.0;
        d.1 += eta.1;
        if (eta.0 * eta.0 + eta.1 * eta.1).sqrt() < params.epsilon {
            break;
        }
    }
    let v = (u.0 + g.0 + d.0, u.1 + g.1 + d.1);
    if !(v.0 >= 0.0 && v.1 >= 0.0 && v.0 <= cw - 1.0 && v.1 <= ch - 1.0) {
        return LevelFlow::failed();
    }
    sample_window(current, v.0, v.1, w, &mut warped);
    let residual = tmpl.iter().zip(&warped).map(|(a, b)| (a - b) * (a - b)).sum();
    LevelFlow {
        d,
        residual,
        converged: true,
    }
}

/// Per-corner outcome of matching a frame against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerFlow {
    pub matched: bool,
    /// Level-0 displacement from the reference corner.
    pub displacement: (f32, f32),
    pub residual: f32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowResult {
    pub corners: Vec<CornerFlow>,
}

impl FlowResult {
    pub fn matched(&self) -> impl Iterator<Item = &CornerFlow> {
        self.corners.iter().filter(|c| c.matched)
    }
}

/// Mean Manhattan displacement over matched corners; `0` when none match.
pub fn dist_feature(flow: &FlowResult) -> f64 {
    let (sum, n) = flow.matched().fold((0.0f64, 0usize), |(s, n), c| {
        (s + c.displacement.0.abs() as f64 + c.displacement.1.abs() as f64, n + 1)
    });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Twice the half-diagonal of `region`, i.e. its full diagonal.
pub fn search_radius(region: BBox) -> f32 {
    let (l, h) = (region.w as f32, region.h as f32);
    2.0 * ((l / 2.0).powi(2) + (h / 2.0).powi(2)).sqrt()
}

/// Frozen off-state reference: corners in `region` and the pyramid they are
/// matched against.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    region: BBox,
    roi: BBox,
    frame_dims: (usize, usize),
    corners: Vec<Corner>,
    pyramid: Pyramid,
    search_radius: f32,
    params: LkParams,
}

/// Corner detector settings used for reference frames.
pub fn reference_corner_params(params: &LkParams) -> CornerParams {
    CornerParams {
        max_corners: 5,
        quality: 0.01,
        min_dist: 5.0,
        border: params.window_half + 2,
    }
}

impl ReferenceSet {
    /// Detects up to five corners in `region` of `reference` and freezes the
    /// reference pyramid with up to `max_level` levels.
    pub fn new(reference: &GrayImage, region: BBox, max_level: usize) -> Result<Self> {
        let params = LkParams::default();
        if region.is_empty() || !region.fits_in(reference.width(), reference.height()) {
            return invalid(format!(
                "region {region:?} outside {}x{} frame",
                reference.width(),
                reference.height()
            ));
        }
        let corners = shi_tomasi(reference, region, &reference_corner_params(&params))?;
        Self::with_corners(reference, region, max_level, corners)
    }

    /// Rebuilds a reference with previously detected corners.
    pub fn with_corners(reference: &GrayImage, region: BBox, max_level: usize, corners: Vec<Corner>) -> Result<Self> {
        let params = LkParams::default();
        let (fw, fh) = (reference.width(), reference.height());
        if region.is_empty() || !region.fits_in(fw, fh) {
            return invalid(format!("region {region:?} outside {fw}x{fh} frame"));
        }
        if corners.iter().any(|c| !region.contains(c.x as f64, c.y as f64)) {
            return invalid("reference corners must lie inside the region");
        }
        let radius = search_radius(region);
        let roi = tracking_roi(region, radius, max_level, &params, fw, fh);
        let levels = max_level.min(Pyramid::supported_levels(roi.w, roi.h));
        let pyramid = build_pyramid(&reference.crop(roi)?, levels)?;
        Ok(Self {
            region,
            roi,
            frame_dims: (fw, fh),
            corners,
            pyramid,
            search_radius: radius,
            params,
        })
    }

    pub fn region(&self) -> BBox {
        self.region
    }

    pub fn roi(&self) -> BBox {
        self.roi
    }

    pub fn corners(&self) -> &[Corner] {
        &self.corners
    }

    pub fn search_radius(&self) -> f32 {
        self.search_radius
    }

    /// Deepest pyramid level in use.
    pub fn max_level(&self) -> usize {
        self.pyramid.max_level()
    }

    pub fn reference_pyramid(&self) -> &Pyramid {
        &self.pyramid
    }

    /// Pyramid of `frame` over the tracking crop, as deep as the reference's.
    pub fn current_pyramid(&self, frame: &GrayImage) -> Result<Pyramid> {
        let (w, h) = self.frame_dims;
        if frame.width() != w || frame.height() != h {
            return Err(Error::DimensionMismatch {
                expected_width: w,
                expected_height: h,
                width: frame.width(),
                height: frame.height(),
            });
        }
        build_pyramid(&frame.crop(self.roi)?, self.max_level())
    }

    /// Matches every reference corner in `frame`.
    pub fn track(&self, frame: &GrayImage) -> Result<FlowResult> {
        let cur = self.current_pyramid(frame)?;
        Ok(self.track_pyramid(&cur, self.max_level()))
    }

    /// Matches using levels `0..=max_level` of a pyramid from
    /// [`current_pyramid`](Self::current_pyramid).
    pub fn track_pyramid(&self, current: &Pyramid, max_level: usize) -> FlowResult {
        let top = max_level.min(self.max_level()).min(current.max_level());
        let center = self.region.center();
        let corners = self
            .corners
            .iter()
            .map(|c| {
                let u0 = (c.x - self.roi.x as f32, c.y - self.roi.y as f32);
                let mut g = (0f32, 0f32);
                let mut out = CornerFlow {
                    matched: false,
                    displacement: (0.0, 0.0),
                    residual: f32::INFINITY,
                };
                for level in (0..=top).rev() {
                    let s = (1u32 << level) as f32;
                    let u = (u0.0 / s, u0.1 / s);
                    let (r, cur) = (self.pyramid.level(level), current.level(level));
                    let mut flow = lk_at_level(r, cur, u, g, &self.params);
                    if level == top && !flow.converged {
                        // Restart the search from the region centre.
                        let g0 = ((center.0 as f32 - c.x) / s, (center.1 as f32 - c.y) / s);
                        flow = lk_at_level(r, cur, u, g0, &self.params);
                        if flow.converged {
                            g = g0;
                        }
                    }
                    if level > 0 {
                        let d = if flow.converged { flow.d } else { (0.0, 0.0) };
                        g = propagate_guess(g, d);
                    } else {
                        // Second hypothesis: no motion. A coarse level can be
                        // pulled off by structure far from the corner.
                        if top > 0 {
                            let still = lk_at_level(r, cur, u, (0.0, 0.0), &self.params);
                            if still.converged && (!flow.converged || still.residual < flow.residual) {
                                g = (0.0, 0.0);
                                flow = still;
                            }
                        }
                        if !flow.converged {
                            continue;
                        }
                        let d = (g.0 + flow.d.0, g.1 + flow.d.1);
                        let len = (d.0 * d.0 + d.1 * d.1).sqrt();
                        out = CornerFlow {
                            matched: len <= self.search_radius,
                            displacement: d,
                            residual: flow.residual,
                        };
                    }
                }
                out
            })
            .collect();
        FlowResult { corners }
    }

    /// `Dist` of `frame` against this reference.
    pub fn dist(&self, frame: &GrayImage) -> Result<f64> {
        Ok(dist_feature(&self.track(frame)?))
    }
}

/// Crop around `region` wide enough for the search radius and window, and at
/// least `16 · 2^max_level` per side where the frame allows.
fn tracking_roi(region: BBox, radius: f32, max_level: usize, params: &LkParams, fw: usize, fh: usize) -> BBox {
    let margin = radius.ceil() as usize + 2 * (params.window_half + 2);
    let mut roi = region.expand(margin, fw, fh);
    let want = crate::imgproc::MIN_TOP_LEVEL_DIM << max_level.min(crate::imgproc::MAX_PYRAMID_LEVEL);
    let grow = |start: usize, len: usize, limit: usize| -> (usize, usize) {
        if len >= want || len >= limit {
            return (start, len);
        }
        let target = want.min(limit);
        let extra = target - len;
        let mut s = start.saturating_sub(extra / 2);
        if s + target > limit {
            s = limit - target;
        }
        (s, target)
    };
    let (x, w) = grow(roi.x, roi.w, fw);
    let (y, h) = grow(roi.y, roi.h, fh);
    roi = BBox::new(x, y, w, h);
    roi
}

/// Frame-to-frame tracking used only to contrast against the fixed
/// reference: corners are re-detected in each previous frame.
#[doc(hidden)]
pub mod ablation {
    use super::*;

    /// `Dist` per frame when each frame is matched against its predecessor.
    /// Frame 0 has no predecessor and gets `0`.
    pub fn adjacent_frame_dists(frames: &[GrayImage], region: BBox, max_level: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(frames.len());
        if frames.is_empty() {
            return Ok(out);
        }
        out.push(0.0);
        for pair in frames.windows(2) {
            let r = ReferenceSet::new(&pair[0], region, max_level)?;
            out.push(r.dist(&pair[1])?);
        }
        Ok(out)
    }
}
