use serde::{Deserialize, Serialize};

use super::{BBox, Image};
use crate::error::{invalid, Result};

/// A Shi-Tomasi corner with its minimum-eigenvalue response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub x: f32,
    pub y: f32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerParams {
    pub max_corners: usize,
    /// Minimum response relative to the strongest response in the region.
    pub quality: f64,
    /// Minimum Euclidean distance between accepted corners.
    pub min_dist: f64,
    /// Corners closer than this to the image edge are discarded.
    pub border: usize,
}

impl Default for CornerParams {
    fn default() -> Self {
        Self {
            max_corners: 5,
            quality: 0.01,
            min_dist: 5.0,
            border: 0,
        }
    }
}

#[inline]
fn clamped<T: Copy + Into<f32>>(img: &Image<T>, x: isize, y: isize) -> f64 {
    let cx = x.clamp(0, img.width() as isize - 1) as usize;
    let cy = y.clamp(0, img.height() as isize - 1) as usize;
    img.get(cx, cy).into() as f64
}

/// 3×3 Sobel derivatives with replicated borders.
#[inline]
pub(crate) fn sobel_at<T: Copy + Into<f32>>(img: &Image<T>, x: isize, y: isize) -> (f64, f64) {
    let p = |dx: isize, dy: isize| clamped(img, x + dx, y + dy);
    let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
    let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
    (gx, gy)
}

#[inline]
pub(crate) fn min_eigenvalue(ixx: f64, ixy: f64, iyy: f64) -> f64 {
    ((ixx + iyy) - ((ixx - iyy).powi(2) + 4.0 * ixy * ixy).sqrt()) / 2.0
}

/// Strongest corners inside `region` by minimum eigenvalue of the 3×3
/// structure tensor of Sobel gradients, strongest first.
pub fn shi_tomasi<T: Copy + Into<f32>>(img: &Image<T>, region: BBox, params: &CornerParams) -> Result<Vec<Corner>> {
    let (w, h) = (img.width(), img.height());
    if region.is_empty() || !region.fits_in(w, h) {
        return invalid(format!("corner region {region:?} outside {w}x{h} image"));
    }

    // Gradients over region + 2, responses over region + 1 (for the local
    // maximum test at the region edge).
    let g = region.expand(2, w, h);
    let mut grads = vec![(0.0f64, 0.0f64); g.area()];
    for y in 0..g.h {
        for x in 0..g.w {
            grads[y * g.w + x] = sobel_at(img, (g.x + x) as isize, (g.y + y) as isize);
        }
    }
    let grad = |x: usize, y: usize| {
        // Outside the gradient patch only happens at the image edge; replicate.
        let gx = x.clamp(g.x, g.right() - 1) - g.x;
        let gy = y.clamp(g.y, g.bottom() - 1) - g.y;
        grads[gy * g.w + gx]
    };

    let r = region.expand(1, w, h);
    let mut resp = vec![0.0f64; r.area()];
    for y in 0..r.h {
        for x in 0..r.w {
            let (cx, cy) = (r.x + x, r.y + y);
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let (gx, gy) = grad(nx, ny);
                    a += gx * gx;
                    b += gx * gy;
                    c += gy * gy;
                }
            }
            resp[y * r.w + x] = min_eigenvalue(a, b, c);
        }
    }
    let at = |x: usize, y: usize| resp[(y - r.y) * r.w + (x - r.x)];

    let mut best = 0.0f64;
    for y in region.y..region.bottom() {
        for x in region.x..region.right() {
            best = best.max(at(x, y));
        }
    }
    if best <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = params.quality * best;

    let mut cands = Vec::new();
    for y in region.y..region.bottom() {
        for x in region.x..region.right() {
            let v = at(x, y);
            if v <= 0.0 || v < floor {
                continue;
            }
            if x < params.border || y < params.border || x + params.border >= w || y + params.border >= h {
                continue;
            }
            let mut is_max = true;
            'nb: for ny in y.saturating_sub(1).max(r.y)..=(y + 1).min(r.bottom() - 1) {
                for nx in x.saturating_sub(1).max(r.x)..=(x + 1).min(r.right() - 1) {
                    if at(nx, ny) > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                cands.push((v, x, y));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));

    let min_d2 = params.min_dist * params.min_dist;
    let mut out: Vec<Corner> = Vec::new();
    for (score, x, y) in cands {
        if out.len() >= params.max_corners {
            break;
        }
        let far = out.iter().all(|c| {
            let dx = c.x as f64 - x as f64;
            let dy = c.y as f64 - y as f64;
            dx * dx + dy * dy >= min_d2
        });
        if far {
            out.push(Corner {
                x: x as f32,
                y: y as f32,
                score,
            });
        }
    }
    Ok(out)
}
