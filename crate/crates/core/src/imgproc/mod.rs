//! Pixel primitives: smoothing, thresholding, morphology, connected
//! components, pyramids and Shi-Tomasi corners.

mod blobs;
mod corners;
mod filter;
mod morph;
mod pyramid;

pub use blobs::{connected_blobs, Blob};
pub use corners::{shi_tomasi, Corner, CornerParams};
pub use filter::{gaussian5x5, threshold_binary};
pub use morph::{close3x3, dilate3x3, erode3x3, morph_open_close, open3x3};
pub use pyramid::{build_pyramid, Pyramid, MAX_PYRAMID_LEVEL, MIN_TOP_LEVEL_DIM};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// 8-bit gray image.
pub type GrayImage = Image<u8>;
/// Float image used for filtered intermediates.
pub type FloatImage = Image<f32>;
/// Binary mask holding only 0 and 255.
pub type BinaryImage = Image<u8>;

impl<T: Copy + Default> Image<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::default())
    }
}

impl<T: Copy> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid(format!("image dimensions must be positive, got {width}x{height}"));
        }
        if data.len() != width * height {
            return invalid(format!(
                "pixel buffer has {} values, expected {}",
                data.len(),
                width * height
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Copies the pixels under `bbox`, which must lie inside the image.
    pub fn crop(&self, bbox: BBox) -> Result<Self> {
        if !bbox.fits_in(self.width, self.height) || bbox.is_empty() {
            return invalid(format!(
                "crop box {bbox:?} outside {}x{} image",
                self.width, self.height
            ));
        }
        let mut data = Vec::with_capacity(bbox.area());
        for y in bbox.y..bbox.y + bbox.h {
            data.extend_from_slice(&self.row(y)[bbox.x..bbox.x + bbox.w]);
        }
        Ok(Self {
            width: bbox.w,
            height: bbox.h,
            data,
        })
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl GrayImage {
    pub fn to_float(&self) -> FloatImage {
        self.map(f32::from)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }
}

impl FloatImage {
    /// Rounds half away from zero and saturates to [0, 255].
    pub fn to_gray(&self) -> GrayImage {
        self.map(round_to_u8)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

#[inline]
pub(crate) fn round_to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Axis-aligned pixel box `[x, x+w) × [y, y+h)`.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl From<[usize; 4]> for BBox {
    fn from(v: [usize; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x as f64 && y >= self.y as f64 && x < self.right() as f64 && y < self.bottom() as f64
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersect(other).is_some()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersect(other).map_or(0, |b| b.area()) as f64;
        let union = (self.area() + other.area()) as f64 - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Grows the box by `margin` on every side, clipped to the image.
    pub fn expand(&self, margin: usize, width: usize, height: usize) -> BBox {
        let x0 = self.x.saturating_sub(margin);
        let y0 = self.y.saturating_sub(margin);
        let x1 = (self.right() + margin).min(width);
        let y1 = (self.bottom() + margin).min(height);
        BBox::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    /// Scales the box about its center by `factor`, clipped to the image.
    pub fn scale(&self, factor: f64, width: usize, height: usize) -> BBox {
        let (cx, cy) = self.center();
        let hw = self.w as f64 * factor / 2.0;
        let hh = self.h as f64 * factor / 2.0;
        let x0 = (cx - hw).round().max(0.0) as usize;
        let y0 = (cy - hh).round().max(0.0) as usize;
        let x1 = ((cx + hw).round() as usize).min(width);
        let y1 = ((cy + hh).round() as usize).min(height);
        BBox::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }
}
