//! Brightness-shift and salt-and-pepper augmentation.
//!
//! Random quantities are redrawn once per frame from a ChaCha8 stream seeded
//! with `mix_seed(spec.seed, frame.index)`, so any frame can be augmented
//! independently and the result does not depend on processing order.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, Frame, VideoReader, VideoWriter};
use crate::error::{invalid, Result};
use crate::imgproc::BBox;

pub const RATIO_STEP: f64 = 0.1;
pub const SNR_STEP: f64 = 0.01;
pub const MAX_SNR: f64 = 0.5;

/// A fixed value or an inclusive `[lo, hi]` range sampled on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Draw<T> {
    Fixed(T),
    Range([T; 2]),
}

impl Draw<f64> {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            Draw::Fixed(v) => (v, v),
            Draw::Range([lo, hi]) => (lo, hi),
        }
    }

    /// Uniform over `lo, lo + step, …, hi`.
    fn sample(&self, rng: &mut impl Rng, step: f64) -> f64 {
        match *self {
            Draw::Fixed(v) => v,
            Draw::Range([lo, hi]) => {
                let n = ((hi - lo) / step).round() as u32;
                let k = rng.random_range(0..=n);
                (lo + k as f64 * step).min(hi)
            }
        }
    }
}

impl Draw<i32> {
    fn sample(&self, rng: &mut impl Rng) -> i32 {
        match *self {
            Draw::Fixed(v) => v,
            Draw::Range([lo, hi]) => rng.random_range(lo..=hi),
        }
    }
}

/// Per-frame augmentation protocol.
///
/// The affected pixels are the leading `row_ratio` of rows and leading
/// `col_ratio` of columns of `region` (whole frame when absent). Ratios are
/// drawn at 0.1 steps, gray offsets at 1, noise ratios at 0.01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub row_ratio: Draw<f64>,
    pub col_ratio: Draw<f64>,
    pub gray_delta: Draw<i32>,
    pub snr: Draw<f64>,
    pub apply_to_reference: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BBox>,
}

impl AugmentSpec {
    /// Leaves every frame untouched.
    pub fn identity() -> Self {
        Self {
            row_ratio: Draw::Fixed(1.0),
            col_ratio: Draw::Fixed(1.0),
            gray_delta: Draw::Fixed(0),
            snr: Draw::Fixed(0.0),
            apply_to_reference: true,
            seed: 0,
            region: None,
        }
    }

    /// Random partial masks, random offset in [-80, 80], noise in [0.01, 0.1].
    pub fn p1(seed: u64) -> Self {
        Self {
            row_ratio: Draw::Range([0.0, 1.0]),
            col_ratio: Draw::Range([0.0, 1.0]),
            gray_delta: Draw::Range([-80, 80]),
            snr: Draw::Range([0.01, 0.1]),
            apply_to_reference: true,
            seed,
            region: None,
        }
    }

    /// Random partial masks, +40, noise in [0.01, 0.1].
    pub fn p2(seed: u64) -> Self {
        Self {
            gray_delta: Draw::Fixed(40),
            ..Self::p1(seed)
        }
    }

    /// Whole frame, +40, noise in [0.01, 0.1].
    pub fn p3(seed: u64) -> Self {
        Self {
            row_ratio: Draw::Fixed(1.0),
            col_ratio: Draw::Fixed(1.0),
            ..Self::p2(seed)
        }
    }

    /// Whole frame, +80, noise in [0.01, 0.1].
    pub fn p4(seed: u64) -> Self {
        Self {
            gray_delta: Draw::Fixed(80),
            ..Self::p3(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("row_ratio", self.row_ratio), ("col_ratio", self.col_ratio)] {
            let (lo, hi) = d.bounds();
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return invalid(format!("{name} must lie in [0, 1] with lo <= hi"));
            }
        }
        let (lo, hi) = self.snr.bounds();
        if !(0.0..=MAX_SNR).contains(&lo) || !(0.0..=MAX_SNR).contains(&hi) || lo > hi {
            return invalid(format!("snr must lie in [0, {MAX_SNR}] with lo <= hi"));
        }
        if let Draw::Range([lo, hi]) = self.gray_delta {
            if lo > hi {
                return invalid("gray_delta range must have lo <= hi");
            }
        }
        Ok(())
    }

    /// Augments one frame. Frame 0 passes through unchanged unless
    /// `apply_to_reference` is set.
    pub fn apply(&self, frame: &Frame) -> Result<Frame> {
        if frame.index == 0 && !self.apply_to_reference {
            return Ok(frame.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, frame.index));
        let region = self
            .region
            .and_then(|r| r.intersect(&BBox::new(0, 0, frame.width(), frame.height())))
            .unwrap_or(BBox::new(0, 0, frame.width(), frame.height()));
        let rows = (self.row_ratio.sample(&mut rng, RATIO_STEP) * region.h as f64).round() as usize;
        let cols = (self.col_ratio.sample(&mut rng, RATIO_STEP) * region.w as f64).round() as usize;
        let delta = self.gray_delta.sample(&mut rng);
        let snr = self.snr.sample(&mut rng, SNR_STEP);
        let noise_seed = rng.random::<u64>();

        let mask = BBox::new(region.x, region.y, cols, rows);
        let shifted = apply_gray_shift(frame, delta, mask);
        apply_salt_pepper(&shifted, snr, mask, noise_seed)
    }
}

/// Adds `v` to every pixel under `mask`, saturating to [0, 255].
pub fn apply_gray_shift(frame: &Frame, v: i32, mask: BBox) -> Frame {
    let mut out = frame.clone();
    let Some(m) = mask.intersect(&BBox::new(0, 0, frame.width(), frame.height())) else {
        return out;
    };
    let w = frame.width();
    let data = out.image.data_mut();
    for y in m.y..m.bottom() {
        for p in &mut data[y * w + m.x..y * w + m.right()] {
            *p = (*p as i32 + v).clamp(0, 255) as u8;
        }
    }
    out
}

/// Sets `round(snr × |mask|)` distinct pixels under `mask`, chosen uniformly,
/// to 0 or 255 with equal probability.
pub fn apply_salt_pepper(frame: &Frame, snr: f64, mask: BBox, seed: u64) -> Result<Frame> {
    if !(0.0..=MAX_SNR).contains(&snr) {
        return invalid(format!("snr {snr} outside [0, {MAX_SNR}]"));
    }
    let mut out = frame.clone();
    let Some(m) = mask.intersect(&BBox::new(0, 0, frame.width(), frame.height())) else {
        return Ok(out);
    };
    let count = (snr * m.area() as f64).round() as usize;
    if count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = frame.width();
    let data = out.image.data_mut();
    for i in sample(&mut rng, m.area(), count) {
        let (x, y) = (m.x + i % m.w, m.y + i / m.w);
        data[y * w + x] = if rng.random::<bool>() { 255 } else { 0 };
    }
    Ok(out)
}

pub fn augment_frames(frames: &[Frame], spec: &AugmentSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    frames.iter().map(|f| spec.apply(f)).collect()
}

/// Streams `input` through `spec` into `output`.
pub fn augment_video(input: impl AsRef<Path>, spec: &AugmentSpec, output: impl AsRef<Path>) -> Result<()> {
    spec.validate()?;
    let reader = VideoReader::new(BufReader::new(File::open(input)?))?;
    let mut writer = VideoWriter::new(BufWriter::new(File::create(output)?), *reader.meta())?;
    for frame in reader {
        writer.write_frame(&spec.apply(&frame?)?)?;
    }
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::GrayImage;
    use proptest::prelude::*;

    fn flat(v: u8, w: usize, h: usize) -> Frame {
        Frame::new(3, GrayImage::filled(w, h, v))
    }

    #[test]
    fn gray_shift_clamps_both_ends() {
        let all = BBox::new(0, 0, 4, 4);
        assert_eq!(apply_gray_shift(&flat(200, 4, 4), 80, all).pixels()[0], 255);
        assert_eq!(apply_gray_shift(&flat(30, 4, 4), -80, all).pixels()[0], 0);
        assert_eq!(apply_gray_shift(&flat(100, 4, 4), 40, all).pixels()[0], 140);
    }

    #[test]
    fn gray_shift_respects_mask() {
        let out = apply_gray_shift(&flat(100, 4, 4), 10, BBox::new(0, 0, 4, 2));
        assert!(out.pixels()[..8].iter().all(|&v| v == 110));
        assert!(out.pixels()[8..].iter().all(|&v| v == 100));
    }

    #[test]
    fn zero_snr_is_identity() {
        let f = flat(128, 10, 10);
        assert_eq!(apply_salt_pepper(&f, 0.0, BBox::new(0, 0, 10, 10), 1).unwrap(), f);
    }

    #[test]
    fn salt_pepper_count_is_exact() {
        let f = flat(128, 100, 100);
        let out = apply_salt_pepper(&f, 0.04, BBox::new(0, 0, 100, 100), 9).unwrap();
        let changed: Vec<u8> = out.pixels().iter().copied().filter(|&v| v != 128).collect();
        assert_eq!(changed.len(), 400);
        assert!(changed.iter().all(|&v| v == 0 || v == 255));
        assert!(changed.contains(&0) && changed.contains(&255));
    }

    #[test]
    fn salt_pepper_is_seed_deterministic() {
        let f = flat(128, 30, 30);
        let m = BBox::new(0, 0, 30, 30);
        let a = apply_salt_pepper(&f, 0.1, m, 5).unwrap();
        assert_eq!(a, apply_salt_pepper(&f, 0.1, m, 5).unwrap());
        assert_ne!(a, apply_salt_pepper(&f, 0.1, m, 6).unwrap());
    }

    #[test]
    fn snr_out_of_range_is_rejected() {
        assert!(apply_salt_pepper(&flat(1, 4, 4), 0.6, BBox::new(0, 0, 4, 4), 0).is_err());
        assert!(AugmentSpec {
            snr: Draw::Range([0.0, 0.7]),
            ..AugmentSpec::p3(0)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn identity_spec_is_bit_identical() {
        let frames: Vec<Frame> = (0..4)
            .map(|i| Frame::new(i, GrayImage::from_fn(40, 40, |x, y| ((x * y + i as usize) % 256) as u8)))
            .collect();
        assert_eq!(augment_frames(&frames, &AugmentSpec::identity()).unwrap(), frames);
    }

    #[test]
    fn p3_shifts_every_pixel_then_adds_noise() {
        let f = flat(100, 50, 50);
        let out = AugmentSpec::p3(1).apply(&f).unwrap();
        let shifted = out.pixels().iter().filter(|&&v| v == 140).count();
        let noisy = out.pixels().iter().filter(|&&v| v == 0 || v == 255).count();
        assert_eq!(shifted + noisy, 2500);
        assert!((25..=250).contains(&noisy), "{noisy}");
    }

    #[test]
    fn p4_offset_is_eighty() {
        let out = AugmentSpec::p4(2).apply(&flat(100, 20, 20)).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 180 || v == 0 || v == 255));
    }

    #[test]
    fn reference_frame_respects_flag() {
        let f0 = Frame::new(0, GrayImage::filled(20, 20, 100));
        let spec = AugmentSpec {
            apply_to_reference: false,
            ..AugmentSpec::p3(3)
        };
        assert_eq!(spec.apply(&f0).unwrap(), f0);
        assert_ne!(AugmentSpec::p3(3).apply(&f0).unwrap(), f0);
    }

    #[test]
    fn range_draws_are_on_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let v = Draw::Range([0.01, 0.1]).sample(&mut rng, SNR_STEP);
            assert!((0.01..=0.1).contains(&v));
            assert!(((v * 100.0) - (v * 100.0).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_json_accepts_fixed_and_ranges() {
        let s: AugmentSpec = serde_json::from_str(
            r#"{"row_ratio":[0,1],"col_ratio":1.0,"gray_delta":[-80,80],"snr":[0.01,0.1],"apply_to_reference":true,"seed":7}"#,
        )
        .unwrap();
        assert_eq!(s.row_ratio, Draw::Range([0.0, 1.0]));
        assert_eq!(s.col_ratio, Draw::Fixed(1.0));
        assert_eq!(s.gray_delta, Draw::Range([-80, 80]));
    }

    proptest! {
        #[test]
        fn gray_shift_is_clamped_and_monotone(p in any::<u8>(), q in any::<u8>(), v in -300i32..300) {
            let m = BBox::new(0, 0, 2, 1);
            let f = Frame::new(0, GrayImage::from_vec(2, 1, vec![p, q]).unwrap());
            let out = apply_gray_shift(&f, v, m);
            let (a, b) = (out.pixels()[0], out.pixels()[1]);
            if p <= q { prop_assert!(a <= b); } else { prop_assert!(a >= b); }
            prop_assert_eq!(apply_gray_shift(&f, 0, m), f);
        }

        #[test]
        fn salt_pepper_count_matches_rounding(snr in 0.0f64..=0.5, w in 1usize..40, h in 1usize..40) {
            let f = Frame::new(0, GrayImage::filled(w, h, 77));
            let out = apply_salt_pepper(&f, snr, BBox::new(0, 0, w, h), 11).unwrap();
            let changed = out.pixels().iter().filter(|&&v| v != 77).count();
            prop_assert_eq!(changed, (snr * (w * h) as f64).round() as usize);
        }
    }
}
