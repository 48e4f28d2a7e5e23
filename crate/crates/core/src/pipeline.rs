//! End-to-end training and streaming detection.

use std::collections::VecDeque;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::background::{MixtureModel, MixtureParams};
use crate::classifier::{cross_validate, svm_predict, svm_train, EvalReport, LinearModel, DEFAULT_C};
use crate::error::{invalid, Error, Result};
use crate::features::{
    balance_check, balance_ok, build_dataset, class_coefficient, ewma_slice, kmeans2, label_by_origin, DistSeries,
    EwmaParams, FeaturePoint, DEFAULT_SEED,
};
use crate::imgproc::{BBox, Corner, GrayImage, MAX_PYRAMID_LEVEL};
use crate::regions::{
    max_contours, pick_object_region, select_candidates, CandidateScore, ContourEntry, Region, DEFAULT_WARMUP,
};
use crate::rfklt::{dist_feature, ReferenceSet};
use crate::video::{Frame, VideoMeta};

pub const MODEL_FILE_VERSION: u32 = 1;
/// Mean gray change of the region, relative to the reference, that
/// suggests retraining.
pub const DRIFT_WARNING: f64 = 80.0;
const CV_FOLDS: usize = 5;
/// Recommended training clip length in seconds.
pub const TRAINING_SECONDS: (f64, f64) = (10.0, 20.0);

/// Grayscale frame stored as base64 bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredFrame {
    pub width: usize,
    pub height: usize,
    pub data: String,
}

impl StoredFrame {
    pub fn encode(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: B64.encode(img.data()),
        }
    }

    pub fn decode(&self) -> Result<GrayImage> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Format(format!("reference frame: {e}")))?;
        GrayImage::from_vec(self.width, self.height, bytes)
    }
}

/// Everything needed to classify one region of a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub meta: VideoMeta,
    pub region: Region,
    pub reference_index: u64,
    pub reference_frame: StoredFrame,
    pub reference_corners: Vec<Corner>,
    /// Deepest pyramid level used when tracking.
    pub levels: usize,
    pub ewma: EwmaParams,
    pub svm: LinearModel,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let (w, h) = self.meta.dims();
        if self.reference_frame.width != w || self.reference_frame.height != h {
            return invalid("reference frame size differs from the video size");
        }
        if !self.region.bbox.fits_in(w, h) || self.region.bbox.is_empty() {
            return invalid(format!("region {:?} outside {w}x{h}", self.region.bbox));
        }
        let b = self.region.bbox;
        if self
            .reference_corners
            .iter()
            .any(|c| !b.contains(c.x as f64, c.y as f64))
        {
            return invalid("reference corners must lie inside the region");
        }
        if self.levels > MAX_PYRAMID_LEVEL {
            return invalid(format!("levels must be at most {MAX_PYRAMID_LEVEL}"));
        }
        self.ewma.validate()?;
        if self.svm.version != 1 || !self.svm.w.iter().chain([&self.svm.b]).all(|v| v.is_finite()) {
            return invalid("malformed classifier");
        }
        Ok(())
    }
}

/// On-disk model: one or more region detectors sharing a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub detectors: Vec<DetectorModel>,
}

impl ModelFile {
    pub fn new(detectors: Vec<DetectorModel>, created_at: u64) -> Self {
        Self {
            version: MODEL_FILE_VERSION,
            created_at,
            detectors,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(s)?;
        if m.version != MODEL_FILE_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", m.version)));
        }
        if m.detectors.is_empty() {
            return Err(Error::Format("model has no detectors".into()));
        }
        let meta = m.detectors[0].meta;
        for d in &m.detectors {
            d.validate()?;
            if d.meta.dims() != meta.dims() {
                return Err(Error::Format("detectors disagree on the frame size".into()));
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    pub levels: usize,
    /// EWMA window in frames; one second when `None`.
    pub window: Option<usize>,
    pub mixture: MixtureParams,
    pub warmup: u64,
    /// Frame used as the off-state reference.
    pub reference_index: u64,
    pub c: f64,
    /// Skip region detection and track this box.
    pub region: Option<BBox>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            levels: MAX_PYRAMID_LEVEL,
            window: None,
            mixture: MixtureParams::default(),
            warmup: DEFAULT_WARMUP,
            reference_index: 0,
            c: DEFAULT_C,
            region: None,
        }
    }
}

impl TrainOptions {
    pub fn ewma(&self, fps: u16) -> Result<EwmaParams> {
        match self.window {
            Some(w) => EwmaParams::from_window(w),
            None => EwmaParams::from_fps(fps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub region: Region,
    #[serde(flatten)]
    pub score: CandidateScore,
}

/// Wall-clock milliseconds per training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub max_contours_ms: f64,
    pub candidates_ms: f64,
    pub cent_feature_ms: f64,
    pub classifier_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub frames: usize,
    pub contours: usize,
    pub candidates: Vec<CandidateReport>,
    /// Index of the chosen candidate; `None` when the region was given.
    pub chosen: Option<usize>,
    pub balance_ratio: f64,
    pub open_frame: u64,
    pub class_coefficient: f64,
    pub cross_validation: EvalReport,
    pub timings: StepTimings,
    pub warnings: Vec<String>,
}

/// Trained detector plus the labelled training points.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: DetectorModel,
    pub report: TrainReport,
    pub points: Vec<FeaturePoint>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// First frame whose maximum contour overlaps `region` by IoU ≥ 0.5 and
/// covers at least half its area.
fn open_frame(contours: &[ContourEntry], region: &Region) -> u64 {
    contours
        .iter()
        .find(|c| c.blob.bbox.iou(&region.bbox) >= 0.5 && 2 * c.blob.area >= region.area)
        .map_or(region.key_frame_index, |c| c.frame_index)
}

fn missing_reference(index: u64) -> Error {
    Error::InvalidArgument(format!("reference frame {index} is past the end of the video"))
}

/// Outcome of the region stage.
struct Stage {
    region: Region,
    reference: GrayImage,
    frames: usize,
    contours: usize,
    candidates: Vec<CandidateReport>,
    chosen: Option<usize>,
    open_frame: Option<u64>,
    dists: Vec<f64>,
}

/// Trains a detector from a clip that starts in the off state.
///
/// `open` is called once per pass over the video and must yield the same
/// frames each time.
pub fn train<F, I>(meta: &VideoMeta, mut open: F, opts: &TrainOptions) -> Result<Trained>
where
    F: FnMut() -> Result<I>,
    I: Iterator<Item = Result<Frame>>,
{
    meta.validate()?;
    if opts.levels > MAX_PYRAMID_LEVEL {
        return invalid(format!("levels must be at most {MAX_PYRAMID_LEVEL}"));
    }
    let ewma = opts.ewma(meta.fps)?;
    let mut warnings = Vec::new();
    let secs = meta.frame_count as f64 / meta.fps as f64;
    if secs < TRAINING_SECONDS.0 || secs > TRAINING_SECONDS.1 {
        warnings.push(format!(
            "training clip is {secs:.1} s; {}-{} s is recommended",
            TRAINING_SECONDS.0, TRAINING_SECONDS.1
        ));
    }
    let (w, h) = meta.dims();
    let mut timings = StepTimings::default();

    let stage = match opts.region {
        None => {
            let t = Instant::now();
            let mut reference = None;
            let mut frames = 0usize;
            let mut bg = MixtureModel::new(w, h, opts.mixture)?;
            let tap = open()?.inspect(|f| {
                if let Ok(f) = f {
                    frames += 1;
                    if f.index == opts.reference_index {
                        reference = Some(f.image.clone());
                    }
                }
            });
            let contours = max_contours(tap, &mut bg, opts.warmup)?;
            timings.max_contours_ms = ms_since(t);
            let reference = reference.ok_or_else(|| missing_reference(opts.reference_index))?;

            let t = Instant::now();
            let candidates = select_candidates(&contours, meta, &reference)?;
            if candidates.is_empty() {
                return Err(Error::NoMotion);
            }
            timings.candidates_ms = ms_since(t);

            let t = Instant::now();
            let mut selection = pick_object_region(&candidates, open()?, &reference, &ewma, opts.seed)?;
            timings.cent_feature_ms = ms_since(t);
            let region = candidates[selection.chosen].region;
            Stage {
                open_frame: Some(open_frame(&contours, &region)),
                region,
                reference,
                frames,
                contours: contours.len(),
                candidates: candidates
                    .iter()
                    .zip(selection.scores)
                    .map(|(c, score)| CandidateReport {
                        region: c.region,
                        score,
                    })
                    .collect(),
                chosen: Some(selection.chosen),
                dists: selection.dist_by_level.swap_remove(opts.levels),
            }
        }
        Some(bbox) => {
            let t = Instant::now();
            let reference = open()?
                .find(|f| f.as_ref().map_or(true, |f| f.index == opts.reference_index))
                .transpose()?
                .ok_or_else(|| missing_reference(opts.reference_index))?
                .image;
            let refset = ReferenceSet::new(&reference, bbox, MAX_PYRAMID_LEVEL)?;
            if refset.corners().is_empty() {
                return Err(Error::UntrackableCandidates);
            }
            let mut dists = Vec::new();
            for f in open()? {
                let cur = refset.current_pyramid(&f?.image)?;
                dists.push(dist_feature(&refset.track_pyramid(&cur, opts.levels)));
            }
            timings.cent_feature_ms = ms_since(t);
            Stage {
                region: Region {
                    bbox,
                    area: bbox.area(),
                    centroid: bbox.center(),
                    key_frame_index: opts.reference_index,
                },
                reference,
                frames: dists.len(),
                contours: 0,
                candidates: Vec::new(),
                chosen: None,
                open_frame: None,
                dists,
            }
        }
    };
    let Stage {
        region,
        reference,
        frames,
        contours,
        candidates,
        chosen,
        open_frame: open_at,
        dists,
    } = stage;

    let t = Instant::now();
    let series = DistSeries::from_dists(dists)?;
    let dataset = build_dataset(&series, &ewma)?;
    let xy: Vec<[f64; 2]> = dataset.iter().map(FeaturePoint::xy).collect();
    let km = kmeans2(&xy, opts.seed)?;
    let points = label_by_origin(&km.labels, &km.centroids, &dataset)?;
    let ratio = balance_check(&points);
    if !balance_ok(ratio) {
        return Err(Error::Imbalanced { ratio });
    }
    let svm = svm_train(&points, opts.c)?;
    let cv = cross_validate(&points, CV_FOLDS, opts.c, opts.seed)?;
    timings.classifier_ms = ms_since(t);

    // Without contours the region "appears" with the first on-labelled frame.
    let open_at = open_at.unwrap_or_else(|| points.iter().find(|p| p.label == Some(1)).map_or(0, |p| p.frame));
    let cr = class_coefficient(&points, open_at, frames);
    let refset = ReferenceSet::new(&reference, region.bbox, MAX_PYRAMID_LEVEL)?;
    let model = DetectorModel {
        meta: *meta,
        region,
        reference_index: opts.reference_index,
        reference_frame: StoredFrame::encode(&reference),
        reference_corners: refset.corners().to_vec(),
        levels: opts.levels,
        ewma,
        svm,
    };
    let report = TrainReport {
        frames,
        contours,
        candidates,
        chosen,
        balance_ratio: ratio,
        open_frame: open_at,
        class_coefficient: cr,
        cross_validation: cv,
        timings,
        warnings,
    };
    Ok(Trained { model, report, points })
}

/// One classified frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u64,
    pub time_s: f64,
    pub region: usize,
    pub dist: f64,
    pub ewma: f64,
    pub state: u8,
    pub margin: f64,
}

/// Per-frame classifier for one region; keeps the trailing `Dist` window.
#[derive(Debug, Clone)]
pub struct StateDetector {
    region_index: usize,
    fps: f64,
    levels: usize,
    ewma: EwmaParams,
    svm: LinearModel,
    reference: ReferenceSet,
    reference_mean: f64,
    ring: VecDeque<f64>,
    drift_reported: bool,
}

impl StateDetector {
    pub fn new(model: &DetectorModel, region_index: usize) -> Result<Self> {
        model.validate()?;
        let img = model.reference_frame.decode()?;
        let reference = ReferenceSet::with_corners(
            &img,
            model.region.bbox,
            MAX_PYRAMID_LEVEL,
            model.reference_corners.clone(),
        )?;
        Ok(Self {
            region_index,
            fps: model.meta.fps as f64,
            levels: model.levels,
            ewma: model.ewma,
            svm: model.svm.clone(),
            reference_mean: img.crop(model.region.bbox)?.mean(),
            reference,
            ring: VecDeque::with_capacity(model.ewma.window_t),
            drift_reported: false,
        })
    }

    /// Dist of `frame` alone, without touching the window.
    pub fn dist(&self, frame: &GrayImage) -> Result<f64> {
        let cur = self.reference.current_pyramid(frame)?;
        Ok(dist_feature(&self.reference.track_pyramid(&cur, self.levels)))
    }

    pub fn process(&mut self, frame: &Frame) -> Result<Detection> {
        let dist = self.dist(&frame.image)?;
        if self.ring.len() == self.ewma.window_t {
            self.ring.pop_front();
        }
        self.ring.push_back(dist);
        let ewma = ewma_slice(self.ring.make_contiguous(), self.ewma.alpha);
        let pred = svm_predict(
            &self.svm,
            &FeaturePoint {
                frame: frame.index,
                dist,
                ewma,
                label: None,
            },
        );
        Ok(Detection {
            frame_index: frame.index,
            time_s: frame.index as f64 / self.fps,
            region: self.region_index,
            dist,
            ewma,
            state: pred.label,
            margin: pred.margin,
        })
    }

    /// Mean gray shift of the region against the reference, reported once
    /// when it first reaches the drift threshold.
    pub fn check_drift(&mut self, frame: &GrayImage) -> Result<Option<f64>> {
        if self.drift_reported {
            return Ok(None);
        }
        let shift = frame.crop(self.reference.region())?.mean() - self.reference_mean;
        if shift.abs() >= DRIFT_WARNING {
            self.drift_reported = true;
            return Ok(Some(shift));
        }
        Ok(None)
    }

    pub fn reset(&mut self) {
        self.ring.clear();
        self.drift_reported = false;
    }
}

/// Majority state over consecutive blocks of `block` detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVote {
    pub start_frame: u64,
    pub end_frame: u64,
    pub time_s: f64,
    pub region: usize,
    pub state: u8,
    pub votes_on: usize,
    pub votes: usize,
}

/// Groups detections of one region into blocks of `block` frames; a block
/// is on when strictly more than half its frames are.
pub fn majority_blocks(detections: &[Detection], block: usize) -> Result<Vec<BlockVote>> {
    if block == 0 {
        return invalid("block size must be positive");
    }
    Ok(detections
        .chunks(block)
        .map(|c| {
            let on = c.iter().filter(|d| d.state == 1).count();
            BlockVote {
                start_frame: c[0].frame_index,
                end_frame: c[c.len() - 1].frame_index,
                time_s: c[0].time_s,
                region: c[0].region,
                state: (2 * on > c.len()) as u8,
                votes_on: on,
                votes: c.len(),
            }
        })
        .collect())
}
