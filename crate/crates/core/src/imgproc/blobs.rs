use serde::{Deserialize, Serialize};

use super::{BBox, BinaryImage};

/// A connected foreground component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub area: usize,
    /// Mean of member pixel coordinates.
    pub centroid: (f64, f64),
    pub bbox: BBox,
}

/// 8-connected components of non-zero pixels, largest first.
///
/// Equal areas keep raster order of their first pixel.
pub fn connected_blobs(mask: &BinaryImage) -> Vec<Blob> {
    let (w, h) = (mask.width(), mask.height());
    let src = mask.data();
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut blobs = Vec::new();

    for start in 0..w * h {
        if src[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0u64, 0u64);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            sx += x as u64;
            sy += y as u64;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let ny0 = y.saturating_sub(1);
            let ny1 = (y + 1).min(h - 1);
            let nx0 = x.saturating_sub(1);
            let nx1 = (x + 1).min(w - 1);
            for ny in ny0..=ny1 {
                for nx in nx0..=nx1 {
                    let j = ny * w + nx;
                    if src[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        blobs.push(Blob {
            area,
            centroid: (sx as f64 / area as f64, sy as f64 / area as f64),
            bbox: BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
        });
    }
    blobs.sort_by_key(|b| std::cmp::Reverse(b.area));
    blobs
}
