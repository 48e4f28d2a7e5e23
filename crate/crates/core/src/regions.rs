//! Object-region detection in three steps:
//!
//! 1. the largest foreground blob of every frame ([`max_contours`]);
//! 2. area, spacing and brightness filters over those blobs
//!    ([`select_candidates`]);
//! 3. the candidate whose tracked features split most cleanly into two
//!    clusters, summed over pyramid depths ([`pick_object_region`]).

use serde::{Deserialize, Serialize};

use crate::background::MixtureModel;
use crate::error::{invalid, Error, Result};
use crate::features::{build_dataset, kmeans2, DistSeries, EwmaParams};
use crate::imgproc::{
    connected_blobs, gaussian5x5, morph_open_close, threshold_binary, BBox, Blob, GrayImage, MAX_PYRAMID_LEVEL,
};
use crate::rfklt::{dist_feature, ReferenceSet};
use crate::video::{Frame, VideoMeta};

pub const FOREGROUND_THRESHOLD: u8 = 240;
/// Cold-start frames whose masks are ignored.
pub const DEFAULT_WARMUP: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: BBox,
    pub area: usize,
    pub centroid: (f64, f64),
    pub key_frame_index: u64,
}

/// Largest blob of one frame and the frame pixels under its box.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourEntry {
    pub frame_index: u64,
    pub blob: Blob,
    pub patch: GrayImage,
}

/// Foreground mask of one frame: blur, background update, threshold and
/// morphological clean-up.
pub fn foreground_mask(frame: &GrayImage, bg: &mut MixtureModel) -> Result<GrayImage> {
    let blurred = gaussian5x5(frame)?;
    let raw = bg.update(&blurred)?;
    Ok(morph_open_close(&threshold_binary(&raw, FOREGROUND_THRESHOLD)))
}

/// Largest connected foreground blob per frame, skipping the first
/// `warmup` frames while the background model is cold.
pub fn max_contours<I>(frames: I, bg: &mut MixtureModel, warmup: u64) -> Result<Vec<ContourEntry>>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    let mut out = Vec::new();
    let mut seen = 0usize;
    for frame in frames {
        let frame = frame?;
        seen += 1;
        let mask = foreground_mask(&frame.image, bg)?;
        if frame.index < warmup {
            continue;
        }
        if let Some(blob) = connected_blobs(&mask).into_iter().next() {
            let patch = frame.image.crop(blob.bbox)?;
            out.push(ContourEntry {
                frame_index: frame.index,
                blob,
                patch,
            });
        }
    }
    if seen == 0 {
        return invalid("video has no frames");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub region: Region,
    /// Summed key-frame minus reference gray over the box, per blob pixel.
    pub f_value: f64,
}

/// Summed gray difference `patch − reference` over `bbox`, divided by
/// `area`.
pub fn f_value(patch: &GrayImage, reference: &GrayImage, bbox: BBox, area: usize) -> Result<f64> {
    let j = reference.crop(bbox)?;
    if patch.width() != j.width() || patch.height() != j.height() || area == 0 {
        return invalid("key-frame patch does not match its box");
    }
    let sum: i64 = patch
        .data()
        .iter()
        .zip(j.data())
        .map(|(&a, &b)| a as i64 - b as i64)
        .sum();
    Ok(sum as f64 / area as f64)
}

/// A smaller box at least this much inside a kept one is a fragment of it.
pub const NESTED_FRACTION: f64 = 0.5;

/// Top quarter by area, then greedy suppression of blobs whose centroid is
/// too close to, or whose box mostly lies inside, a larger kept blob, then
/// `F ≥ mean F` over the survivors. Empty input gives empty output.
pub fn select_candidates(contours: &[ContourEntry], meta: &VideoMeta, reference: &GrayImage) -> Result<Vec<Candidate>> {
    if contours.is_empty() {
        return Ok(Vec::new());
    }
    let (w, h) = meta.dims();
    if reference.width() != w || reference.height() != h {
        return Err(Error::DimensionMismatch {
            expected_width: w,
            expected_height: h,
            width: reference.width(),
            height: reference.height(),
        });
    }
    let mut order: Vec<&ContourEntry> = contours.iter().collect();
    order.sort_by(|a, b| b.blob.area.cmp(&a.blob.area).then(a.frame_index.cmp(&b.frame_index)));
    order.truncate(contours.len().div_ceil(4));

    let spacing = w.min(h) as f64 / 10.0;
    let mut kept: Vec<&ContourEntry> = Vec::new();
    for c in order {
        let far = kept.iter().all(|k| {
            let (dx, dy) = (
                k.blob.centroid.0 - c.blob.centroid.0,
                k.blob.centroid.1 - c.blob.centroid.1,
            );
            let inside = k.blob.bbox.intersect(&c.blob.bbox).map_or(0, |b| b.area());
            dx.hypot(dy) >= spacing && (inside as f64) < NESTED_FRACTION * c.blob.bbox.area() as f64
        });
        if far {
            kept.push(c);
        }
    }

    let scored = kept
        .into_iter()
        .map(|c| {
            Ok(Candidate {
                region: Region {
                    bbox: c.blob.bbox,
                    area: c.blob.area,
                    centroid: c.blob.centroid,
                    key_frame_index: c.frame_index,
                },
                f_value: f_value(&c.patch, reference, c.blob.bbox, c.blob.area)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = scored.iter().map(|c| c.f_value).sum::<f64>() / scored.len() as f64;
    Ok(scored.into_iter().filter(|c| c.f_value >= mean).collect())
}

/// Number of pyramid caps scored per candidate.
pub const CENT_LEVELS: usize = MAX_PYRAMID_LEVEL + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub f_value: f64,
    pub cent_feature: f64,
    /// Centroid x-gap per pyramid cap.
    pub diffs: [f64; CENT_LEVELS],
    pub corners: usize,
}

/// `Σ diffs[i] / 2^i`.
pub fn cent_feature(diffs: &[f64; CENT_LEVELS]) -> f64 {
    diffs.iter().enumerate().map(|(i, d)| d / (1u32 << i) as f64).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Index into the candidate list.
    pub chosen: usize,
    pub scores: Vec<CandidateScore>,
    /// Per-frame `Dist` of the chosen candidate, one series per pyramid cap.
    pub dist_by_level: Vec<Vec<f64>>,
}

/// Centroid x-gap of the two k-means clusters of `(dist, ewma)`; zero when
/// the points cannot be split.
fn cluster_gap(dists: &[f64], ewma: &EwmaParams, seed: u64) -> Result<f64> {
    let series = DistSeries::from_dists(dists.iter().copied())?;
    let points = match build_dataset(&series, ewma) {
        Ok(p) => p,
        Err(Error::InvalidArgument(_)) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    let xy: Vec<[f64; 2]> = points.iter().map(|p| p.xy()).collect();
    match kmeans2(&xy, seed) {
        Ok(km) => Ok((km.centroids[1][0] - km.centroids[0][0]).abs()),
        Err(Error::DegenerateClustering) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Scores every candidate over the training frames and returns the one with
/// the largest CentFeature. `frames` must start at the reference frame's
/// video and be in order.
pub fn pick_object_region<I>(
    candidates: &[Candidate],
    frames: I,
    reference: &GrayImage,
    ewma: &EwmaParams,
    seed: u64,
) -> Result<Selection>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    if candidates.is_empty() {
        return Err(Error::NoMotion);
    }
    let refs = candidates
        .iter()
        .map(|c| ReferenceSet::new(reference, c.region.bbox, MAX_PYRAMID_LEVEL))
        .collect::<Result<Vec<_>>>()?;
    if refs.iter().all(|r| r.corners().is_empty()) {
        return Err(Error::UntrackableCandidates);
    }
    let mut series: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); CENT_LEVELS]; candidates.len()];
    for frame in frames {
        let frame = frame?;
        for (r, s) in refs.iter().zip(series.iter_mut()) {
            if r.corners().is_empty() {
                continue;
            }
            let cur = r.current_pyramid(&frame.image)?;
            for (level, out) in s.iter_mut().enumerate() {
                out.push(dist_feature(&r.track_pyramid(&cur, level)));
            }
        }
    }

    let mut scores = Vec::with_capacity(candidates.len());
    for ((c, r), s) in candidates.iter().zip(&refs).zip(&series) {
        let mut diffs = [0.0; CENT_LEVELS];
        if !r.corners().is_empty() {
            for (d, level) in diffs.iter_mut().zip(s) {
                *d = cluster_gap(level, ewma, seed)?;
            }
        }
        scores.push(CandidateScore {
            f_value: c.f_value,
            cent_feature: cent_feature(&diffs),
            diffs,
            corners: r.corners().len(),
        });
    }
    // First maximum wins ties.
    let mut chosen = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.cent_feature > scores[chosen].cent_feature {
            chosen = i;
        }
    }
    Ok(Selection {
        chosen,
        scores,
        dist_by_level: series.swap_remove(chosen),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::MixtureParams;
    use crate::imgproc::Image;

    fn meta(w: u32, h: u32) -> VideoMeta {
        VideoMeta {
            width: w,
            height: h,
            fps: 25,
            frame_count: 0,
        }
    }

    fn entry(frame: u64, area: usize, c: (f64, f64), bbox: BBox, value: u8) -> ContourEntry {
        ContourEntry {
            frame_index: frame,
            blob: Blob {
                area,
                centroid: c,
                bbox,
            },
            patch: GrayImage::filled(bbox.w, bbox.h, value),
        }
    }

    #[test]
    fn static_video_has_no_contours_after_warmup() {
        let img = GrayImage::from_fn(64, 48, |x, y| ((x * 3 + y * 5) % 120) as u8 + 40);
        let frames = (0..20).map(|i| Ok(Frame::new(i, img.clone())));
        let mut bg = MixtureModel::new(64, 48, MixtureParams::default()).unwrap();
        assert!(max_contours(frames, &mut bg, DEFAULT_WARMUP).unwrap().is_empty());
    }

    #[test]
    fn moving_square_is_the_max_contour() {
        let base = GrayImage::from_fn(64, 48, |x, y| ((x * 3 + y * 5) % 120) as u8 + 40);
        let frames = (0..30u64).map(|i| {
            let mut f = base.clone();
            if i >= 20 {
                for y in 10..26 {
                    for x in 20..36 {
                        f.set(x, y, 250);
                    }
                }
            }
            Ok(Frame::new(i, f))
        });
        let mut bg = MixtureModel::new(64, 48, MixtureParams::default()).unwrap();
        let c = max_contours(frames, &mut bg, DEFAULT_WARMUP).unwrap();
        assert!(!c.is_empty());
        let truth = BBox::new(20, 10, 16, 16);
        assert!(c.iter().any(|e| e.blob.bbox.iou(&truth) > 0.3));
        assert_eq!(c[0].patch.width(), c[0].blob.bbox.w);
    }

    #[test]
    fn empty_video_is_an_error() {
        let mut bg = MixtureModel::new(8, 8, MixtureParams::default()).unwrap();
        assert!(max_contours(std::iter::empty(), &mut bg, 0).is_err());
    }

    #[test]
    fn single_contour_survives() {
        let reference = GrayImage::filled(1280, 720, 50);
        let b = BBox::new(100, 100, 20, 20);
        let out = select_candidates(&[entry(5, 300, (110.0, 110.0), b, 200)], &meta(1280, 720), &reference).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].region.key_frame_index, 5);
        assert!((out[0].f_value - 150.0 * 400.0 / 300.0).abs() < 1e-9);
    }

    #[test]
    fn close_blobs_collapse_to_one() {
        let reference = GrayImage::filled(1280, 720, 50);
        let b = BBox::new(100, 100, 20, 20);
        let c = vec![
            entry(1, 300, (110.0, 110.0), b, 200),
            entry(2, 300, (115.0, 110.0), BBox::new(105, 100, 20, 20), 200),
        ];
        // Quarter of two is one entry; feed eight so both reach the spacing step.
        let mut all = c.clone();
        for i in 0..6 {
            all.push(entry(10 + i, 10, (500.0, 500.0), BBox::new(495, 495, 10, 10), 50));
        }
        let out = select_candidates(&all, &meta(1280, 720), &reference).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].region.key_frame_index, 1);
    }

    #[test]
    fn nested_fragments_are_suppressed() {
        let reference = GrayImage::filled(640, 352, 50);
        let mut all = vec![
            entry(1, 17000, (310.0, 160.0), BBox::new(238, 100, 144, 120), 200),
            entry(2, 4000, (340.0, 150.0), BBox::new(290, 100, 92, 110), 220),
        ];
        for i in 0..6 {
            all.push(entry(10 + i, 10, (600.0, 30.0), BBox::new(595, 25, 10, 10), 50));
        }
        let out = select_candidates(&all, &meta(640, 352), &reference).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].region.key_frame_index, 1);
    }

    #[test]
    fn output_is_subset_of_top_quarter() {
        let reference = GrayImage::filled(640, 352, 60);
        let all: Vec<ContourEntry> = (0..40u64)
            .map(|i| {
                let x = (i as usize * 97) % 600;
                let y = (i as usize * 53) % 320;
                let b = BBox::new(x, y, 10 + i as usize % 20, 10);
                entry(
                    i,
                    50 + (i as usize * 37) % 90,
                    (x as f64 + 5.0, y as f64 + 5.0),
                    b,
                    (60 + i * 4) as u8,
                )
            })
            .collect();
        let out = select_candidates(&all, &meta(640, 352), &reference).unwrap();
        let mut areas: Vec<usize> = all.iter().map(|e| e.blob.area).collect();
        areas.sort_unstable_by(|a, b| b.cmp(a));
        let cut = areas[9];
        assert!(!out.is_empty());
        for c in &out {
            assert!(c.region.area >= cut);
        }
    }

    #[test]
    fn empty_contours_give_no_candidates() {
        assert!(select_candidates(&[], &meta(64, 64), &GrayImage::new(64, 64))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn cent_feature_weights_halve() {
        let d = 2.0;
        assert!((cent_feature(&[d; CENT_LEVELS]) - 1.9375 * d).abs() < 1e-12);
    }

    #[test]
    fn flat_candidates_are_untrackable() {
        let reference = GrayImage::filled(128, 128, 90);
        let c = Candidate {
            region: Region {
                bbox: BBox::new(40, 40, 30, 30),
                area: 900,
                centroid: (55.0, 55.0),
                key_frame_index: 3,
            },
            f_value: 1.0,
        };
        let frames = (0..40).map(|i| Ok(Frame::new(i, reference.clone())));
        let err = pick_object_region(&[c], frames, &reference, &EwmaParams::from_fps(25).unwrap(), 42);
        assert!(matches!(err, Err(Error::UntrackableCandidates)));
    }

    #[test]
    fn single_candidate_is_returned() {
        let reference = Image::from_fn(128, 128, |x, y| if ((x / 8) + (y / 8)) % 2 == 0 { 40 } else { 200 });
        let c = Candidate {
            region: Region {
                bbox: BBox::new(40, 40, 30, 30),
                area: 900,
                centroid: (55.0, 55.0),
                key_frame_index: 3,
            },
            f_value: 1.0,
        };
        let frames = (0..40).map(|i| Ok(Frame::new(i, reference.clone())));
        let s = pick_object_region(&[c], frames, &reference, &EwmaParams::from_fps(25).unwrap(), 42).unwrap();
        assert_eq!(s.chosen, 0);
        assert_eq!(s.dist_by_level.len(), CENT_LEVELS);
        assert!(s
            .dist_by_level
            .iter()
            .all(|d| d.len() == 40 && d.iter().all(|&v| v == 0.0)));
        assert_eq!(s.scores[0].cent_feature, 0.0);
    }
}
