use super::{BinaryImage, FloatImage, GrayImage, Image};
use crate::error::{invalid, Result};

/// Binomial taps (1, 4, 6, 4, 1) / 16.
pub(crate) const GAUSS5: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Replicate-border index table for a 5-tap kernel centred on each sample.
fn tap_indices(len: usize) -> Vec<[usize; 5]> {
    (0..len)
        .map(|i| {
            let mut t = [0usize; 5];
            for (k, slot) in t.iter_mut().enumerate() {
                *slot = (i as isize + k as isize - 2).clamp(0, len as isize - 1) as usize;
            }
            t
        })
        .collect()
}

/// Separable 5×5 binomial blur with replicated borders.
pub fn gaussian5x5<T: Copy + Into<f32>>(img: &Image<T>) -> Result<FloatImage> {
    let (w, h) = (img.width(), img.height());
    if w < 5 || h < 5 {
        return invalid(format!("gaussian5x5 needs at least 5x5 pixels, got {w}x{h}"));
    }
    let xs = tap_indices(w);
    let ys = tap_indices(h);

    let src = img.data();
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, t) in xs.iter().enumerate() {
            out[x] = GAUSS5[0] * row[t[0]].into()
                + GAUSS5[1] * row[t[1]].into()
                + GAUSS5[2] * row[t[2]].into()
                + GAUSS5[3] * row[t[3]].into()
                + GAUSS5[4] * row[t[4]].into();
        }
    }

    let mut out = vec![0f32; w * h];
    for (y, t) in ys.iter().enumerate() {
        let rows = t.map(|r| &tmp[r * w..(r + 1) * w]);
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..w {
            dst[x] = GAUSS5[0] * rows[0][x]
                + GAUSS5[1] * rows[1][x]
                + GAUSS5[2] * rows[2][x]
                + GAUSS5[3] * rows[3][x]
                + GAUSS5[4] * rows[4][x];
        }
    }
    Image::from_vec(w, h, out)
}

/// Blurs with the 5×5 binomial kernel and keeps every second pixel.
///
/// Equal to `gaussian5x5` followed by taking even rows and columns, but only
/// evaluates the kept samples.
pub(crate) fn blur_downsample(img: &FloatImage) -> FloatImage {
    let (w, h) = (img.width(), img.height());
    let (w2, h2) = (w / 2, h / 2);
    let xs = tap_indices(w);
    let ys = tap_indices(h);
    let src = img.data();

    // Vertical pass on even rows only.
    let mut tmp = vec![0f32; w * h2];
    for oy in 0..h2 {
        let t = ys[2 * oy];
        let rows = t.map(|r| &src[r * w..(r + 1) * w]);
        let dst = &mut tmp[oy * w..(oy + 1) * w];
        for x in 0..w {
            dst[x] = GAUSS5[0] * rows[0][x]
                + GAUSS5[1] * rows[1][x]
                + GAUSS5[2] * rows[2][x]
                + GAUSS5[3] * rows[3][x]
                + GAUSS5[4] * rows[4][x];
        }
    }

    let mut out = vec![0f32; w2 * h2];
    for oy in 0..h2 {
        let row = &tmp[oy * w..(oy + 1) * w];
        let dst = &mut out[oy * w2..(oy + 1) * w2];
        for (ox, d) in dst.iter_mut().enumerate() {
            let t = xs[2 * ox];
            *d = GAUSS5[0] * row[t[0]]
                + GAUSS5[1] * row[t[1]]
                + GAUSS5[2] * row[t[2]]
                + GAUSS5[3] * row[t[3]]
                + GAUSS5[4] * row[t[4]];
        }
    }
    Image {
        width: w2,
        height: h2,
        data: out,
    }
}

/// `255` where `pixel > t`, else `0`.
pub fn threshold_binary(img: &GrayImage, t: u8) -> BinaryImage {
    img.map(|v| if v > t { 255 } else { 0 })
}
