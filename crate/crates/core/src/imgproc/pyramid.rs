use super::filter::blur_downsample;
use super::{FloatImage, Image};
use crate::error::{invalid, Result};

/// Highest pyramid level the tracker uses (levels 0..=4).
pub const MAX_PYRAMID_LEVEL: usize = 4;
/// Smallest side length allowed at the top level of a multi-level pyramid.
pub const MIN_TOP_LEVEL_DIM: usize = 16;

/// Gaussian image pyramid; level 0 is full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<FloatImage>,
}

impl Pyramid {
    pub fn levels(&self) -> &[FloatImage] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &FloatImage {
        &self.levels[l]
    }

    /// Index of the coarsest level.
    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Largest `max_level` (capped at [`MAX_PYRAMID_LEVEL`]) that
    /// `build_pyramid` accepts for a `width × height` image.
    pub fn supported_levels(width: usize, height: usize) -> usize {
        (1..=MAX_PYRAMID_LEVEL)
            .rev()
            .find(|&l| (width >> l) >= MIN_TOP_LEVEL_DIM && (height >> l) >= MIN_TOP_LEVEL_DIM)
            .unwrap_or(0)
    }
}

/// Builds levels `0..=max_level`; each level is the previous one blurred
/// with the 5×5 binomial kernel and subsampled by two.
pub fn build_pyramid<T: Copy + Into<f32>>(img: &Image<T>, max_level: usize) -> Result<Pyramid> {
    if max_level > MAX_PYRAMID_LEVEL {
        return invalid(format!("max_level {max_level} exceeds {MAX_PYRAMID_LEVEL}"));
    }
    let (w, h) = (img.width(), img.height());
    if max_level > 0 && ((w >> max_level) < MIN_TOP_LEVEL_DIM || (h >> max_level) < MIN_TOP_LEVEL_DIM) {
        return invalid(format!(
            "{w}x{h} image too small for {max_level} pyramid levels (top level must be at least {MIN_TOP_LEVEL_DIM}px)"
        ));
    }
    let mut levels = Vec::with_capacity(max_level + 1);
    levels.push(img.map(|v| v.into()));
    for l in 1..=max_level {
        let next = blur_downsample(&levels[l - 1]);
        levels.push(next);
    }
    Ok(Pyramid { levels })
}
