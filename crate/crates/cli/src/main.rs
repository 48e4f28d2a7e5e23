use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use aerator_core::background::MixtureParams;
use aerator_core::classifier::{evaluate, EvalReport};
use aerator_core::features::{write_csv, FeaturePoint, DEFAULT_SEED};
use aerator_core::imgproc::{BBox, MAX_PYRAMID_LEVEL};
use aerator_core::pipeline::{majority_blocks, train, Detection, ModelFile, StateDetector, TrainOptions};
use aerator_core::video::{
    augment_video, labels_path, read_video, synth_scene, AugmentSpec, Frame, GroundTruth, SynthScene, VideoReader,
};

mod plot;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  other failure (I/O, corrupt input, invalid arguments)
  2  no motion found in the training video
  3  on/off class imbalance in the training video
  4  model and video frame sizes differ
  5  detections and ground truth have different lengths
  6  malformed spec or config file";

#[derive(Parser)]
#[command(name = "aerator", version, about = "Aerator region and working-state detection", after_help = EXIT_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the machine region in a training clip and fit the state classifier.
    Train(TrainArgs),
    /// Classify every frame of a video (or an RGV1 stream on stdin).
    Detect(DetectArgs),
    /// Render a synthetic scene from a JSON spec.
    Synth(SynthArgs),
    /// Apply a brightness/noise augmentation spec to a video.
    Augment(AugmentArgs),
    /// Score detections against ground truth and emit plots.
    Eval(EvalArgs),
    /// Time the detection path per resolution.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    video: PathBuf,
    /// Model file to write.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Pyramid levels above the base image.
    #[arg(long, default_value_t = MAX_PYRAMID_LEVEL)]
    levels: usize,
    /// EWMA window in frames (default: one second of video).
    #[arg(long)]
    window: Option<usize>,
    /// JSON file overriding background-model parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip region detection and use this box (`x,y,w,h`).
    #[arg(long, value_parser = parse_bbox)]
    region: Option<BBox>,
    /// Off-state frame used as the tracking reference.
    #[arg(long, default_value_t = 0)]
    reference_index: u64,
    /// Also write the labelled training features as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    model: PathBuf,
    /// RGV1 video; reads stdin when absent or `-`.
    video: Option<PathBuf>,
    /// Emit one majority vote per block of this many seconds instead of
    /// per-frame results.
    #[arg(long)]
    every: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    spec: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    spec: PathBuf,
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON-lines output of `detect`.
    detections: PathBuf,
    /// A JSON array of 0/1 labels, or a synthetic-scene label sidecar.
    truth: PathBuf,
    /// Detector to score in multi-region models.
    #[arg(long, default_value_t = 0)]
    region_index: usize,
    /// Ignore frames within this many frames of a ground-truth transition.
    #[arg(long, default_value_t = 0)]
    guard: u64,
    /// Per-frame dist/ewma/label CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Feature scatter plot.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// `MODEL VIDEO` pairs, one per resolution.
    #[arg(required = true, num_args = 2.., value_names = ["MODEL", "VIDEO"])]
    inputs: Vec<PathBuf>,
    /// Write every detection as JSON lines.
    #[arg(long)]
    detections: Option<PathBuf>,
}

/// Failure with a fixed exit code.
#[derive(Debug)]
struct Fail {
    code: u8,
    message: String,
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Fail {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Fail {
        code,
        message: message.into(),
    }
    .into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use aerator_core::Error as E;
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Fail>() {
            return f.code;
        }
        match cause.downcast_ref::<E>() {
            Some(E::NoMotion) => return 2,
            Some(E::Imbalanced { .. }) => return 3,
            Some(E::DimensionMismatch { .. }) => return 4,
            _ => {}
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn parse_bbox(s: &str) -> std::result::Result<BBox, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, w, h] if w > 0 && h > 0 => Ok(BBox::new(x, y, w, h)),
        _ => Err("expected x,y,w,h with positive width and height".into()),
    }
}

/// Parses a JSON spec, reporting the offending field path with exit 6.
fn read_spec<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        fail(6, format!("{}: at `{at}`: {}", path.display(), e.inner()))
    })
}

fn write_json_line(out: &mut impl Write, v: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// `SOURCE_DATE_EPOCH` when set, so rebuilt models are byte-identical.
fn created_at() -> Result<u64> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v.trim().parse().context("SOURCE_DATE_EPOCH is not an integer"),
        Err(_) => Ok(SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs()),
    }
}

fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ModelFile::from_json(&text).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mixture = match &a.config {
        Some(p) => {
            let m: MixtureParams = read_spec(p)?;
            m.validate().map_err(|e| fail(6, format!("{}: {e}", p.display())))?;
            m
        }
        None => MixtureParams::default(),
    };
    let opts = TrainOptions {
        seed: a.seed,
        levels: a.levels,
        window: a.window,
        mixture,
        reference_index: a.reference_index,
        region: a.region,
        ..TrainOptions::default()
    };
    let (meta, _) = read_video(&a.video).with_context(|| format!("opening {}", a.video.display()))?;
    let trained = train(&meta, || Ok(read_video(&a.video)?.1), &opts)?;
    for w in &trained.report.warnings {
        eprintln!("warning: {w}");
    }

    let file = ModelFile::new(vec![trained.model], created_at()?);
    fs::write(&a.out, file.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.csv {
        write_csv(&trained.points, BufWriter::new(File::create(p)?))?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, &trained.report)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let input: Box<dyn Read> = match a.video.as_deref() {
        None => Box::new(io::stdin().lock()),
        Some(p) if p == Path::new("-") => Box::new(io::stdin().lock()),
        Some(p) => Box::new(File::open(p).with_context(|| format!("opening {}", p.display()))?),
    };
    let reader = VideoReader::new(BufReader::new(input))?;
    let meta = model.detectors[0].meta;
    if reader.meta().dims() != meta.dims() {
        let (w, h) = reader.meta().dims();
        return Err(aerator_core::Error::DimensionMismatch {
            expected_width: meta.width as usize,
            expected_height: meta.height as usize,
            width: w,
            height: h,
        }
        .into());
    }
    let mut detectors = model
        .detectors
        .iter()
        .enumerate()
        .map(|(i, d)| StateDetector::new(d, i))
        .collect::<aerator_core::Result<Vec<_>>>()?;
    let block = match a.every {
        Some(s) if s > 0.0 && s.is_finite() => Some(((s * meta.fps as f64).round() as usize).max(1)),
        Some(s) => bail!("--every must be a positive number of seconds, got {s}"),
        None => None,
    };

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut pending: Vec<Vec<Detection>> = vec![Vec::new(); detectors.len()];
    for frame in reader {
        let frame = frame?;
        for (det, buf) in detectors.iter_mut().zip(&mut pending) {
            if let Some(shift) = det.check_drift(&frame.image)? {
                eprintln!(
                    "warning: region mean gray drifted by {shift:+.1} from the reference at frame {}; consider retraining",
                    frame.index
                );
            }
            let d = det.process(&frame)?;
            match block {
                None => write_json_line(&mut out, &d)?,
                Some(n) => {
                    buf.push(d);
                    if buf.len() == n {
                        for v in majority_blocks(buf, n)? {
                            write_json_line(&mut out, &v)?;
                        }
                        buf.clear();
                    }
                }
            }
        }
        out.flush()?;
    }
    if let Some(n) = block {
        for buf in pending.iter().filter(|b| !b.is_empty()) {
            for v in majority_blocks(buf, n)? {
                write_json_line(&mut out, &v)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let scene: SynthScene = read_spec(&a.spec)?;
    scene
        .validate()
        .map_err(|e| fail(6, format!("{}: {e}", a.spec.display())))?;
    synth_scene(&scene, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let spec: AugmentSpec = read_spec(&a.spec)?;
    spec.validate()
        .map_err(|e| fail(6, format!("{}: {e}", a.spec.display())))?;
    augment_video(&a.input, &spec, &a.out).with_context(|| format!("augmenting {}", a.input.display()))?;
    // Augmentation leaves the working state alone, so the labels carry over.
    let labels = labels_path(&a.input);
    if labels.exists() {
        fs::copy(&labels, labels_path(&a.out))?;
    }
    Ok(())
}

/// Ground truth as per-frame labels for `frames`.
fn truth_labels(path: &Path, frames: &[u64]) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.is_array() {
        let labels: Vec<u8> =
            serde_json::from_value(value).with_context(|| format!("{}: expected 0/1 labels", path.display()))?;
        if labels.iter().any(|&l| l > 1) {
            bail!("{}: labels must be 0 or 1", path.display());
        }
        return Ok(labels);
    }
    let truth: GroundTruth =
        serde_json::from_value(value).with_context(|| format!("{}: expected a label sidecar", path.display()))?;
    Ok(frames.iter().map(|&f| truth.is_on(f) as u8).collect())
}

fn read_detections(path: &Path, region: usize) -> Result<Vec<Detection>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Detection = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: not a per-frame detection", path.display(), i + 1))?;
        if d.region == region {
            out.push(d);
        }
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let dets = read_detections(&a.detections, a.region_index)?;
    let frames: Vec<u64> = dets.iter().map(|d| d.frame_index).collect();
    let truth = truth_labels(&a.truth, &frames)?;
    if truth.len() != dets.len() {
        return Err(fail(
            5,
            format!("{} detections but {} ground-truth labels", dets.len(), truth.len()),
        ));
    }
    let near: Vec<u64> = truth
        .windows(2)
        .zip(&frames[1..])
        .filter(|(w, _)| w[0] != w[1])
        .map(|(_, &f)| f)
        .collect();
    let keep = |f: u64| !near.iter().any(|&t| f.abs_diff(t) <= a.guard);
    let (pred, kept): (Vec<u8>, Vec<u8>) = dets
        .iter()
        .zip(&truth)
        .filter(|(d, _)| keep(d.frame_index))
        .map(|(d, &t)| (d.state, t))
        .unzip();
    let report: EvalReport = evaluate(&pred, &kept)?;

    let points: Vec<FeaturePoint> = dets
        .iter()
        .zip(&truth)
        .map(|(d, &t)| FeaturePoint {
            frame: d.frame_index,
            dist: d.dist,
            ewma: d.ewma,
            label: Some(t),
        })
        .collect();
    if let Some(p) = &a.csv {
        write_csv(&points, BufWriter::new(File::create(p)?))?;
    }
    if let Some(p) = &a.svg {
        fs::write(p, plot::scatter_svg(&points)).with_context(|| format!("writing {}", p.display()))?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct BenchRun {
    width: u32,
    height: u32,
    frames: usize,
    mean_ms: f64,
    p50_ms: f64,
    p90_ms: f64,
    p99_ms: f64,
    max_ms: f64,
    fps: f64,
}

#[derive(Serialize)]
struct BenchReport {
    runs: Vec<BenchRun>,
    /// FPS never rises with resolution.
    monotonic: bool,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if !a.inputs.len().is_multiple_of(2) {
        bail!("bench takes MODEL VIDEO pairs");
    }
    let mut sink: Option<BufWriter<File>> = match &a.detections {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut runs = Vec::new();
    for pair in a.inputs.chunks(2) {
        let model = load_model(&pair[0])?;
        let (meta, reader) = read_video(&pair[1]).with_context(|| format!("opening {}", pair[1].display()))?;
        // Decode up front so the timings cover the detect path only.
        let frames: Vec<Frame> = reader.collect::<aerator_core::Result<_>>()?;
        if frames.is_empty() {
            bail!("{} has no frames", pair[1].display());
        }
        let mut detectors = model
            .detectors
            .iter()
            .enumerate()
            .map(|(i, d)| StateDetector::new(d, i))
            .collect::<aerator_core::Result<Vec<_>>>()?;
        let mut times = Vec::with_capacity(frames.len());
        let mut results = Vec::with_capacity(frames.len() * detectors.len());
        for f in &frames {
            let t = Instant::now();
            for det in &mut detectors {
                results.push(det.process(f)?);
            }
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        if let Some(s) = sink.as_mut() {
            for d in &results {
                write_json_line(s, d)?;
            }
        }
        let total: f64 = times.iter().sum();
        times.sort_by(f64::total_cmp);
        runs.push(BenchRun {
            width: meta.width,
            height: meta.height,
            frames: frames.len(),
            mean_ms: total / frames.len() as f64,
            p50_ms: percentile(&times, 50.0),
            p90_ms: percentile(&times, 90.0),
            p99_ms: percentile(&times, 99.0),
            max_ms: times[times.len() - 1],
            fps: frames.len() as f64 / (total / 1e3),
        });
    }
    if let Some(mut s) = sink {
        s.flush()?;
    }
    runs.sort_by_key(|r| r.width as u64 * r.height as u64);
    let monotonic = runs.windows(2).all(|w| w[1].fps <= w[0].fps);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, &BenchReport { runs, monotonic })?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_arguments() {
        assert_eq!(parse_bbox("1,2,30,40").unwrap(), BBox::new(1, 2, 30, 40));
        assert_eq!(parse_bbox(" 1, 2 ,3,4").unwrap(), BBox::new(1, 2, 3, 4));
        assert!(parse_bbox("1,2,3").is_err());
        assert!(parse_bbox("1,2,0,4").is_err());
        assert!(parse_bbox("a,2,3,4").is_err());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 5.0);
        assert_eq!(percentile(&v, 90.0), 9.0);
        assert_eq!(percentile(&v, 99.0), 10.0);
        assert_eq!(percentile(&[3.0], 50.0), 3.0);
    }

    #[test]
    fn exit_codes_follow_error_kinds() {
        let e: anyhow::Error = aerator_core::Error::NoMotion.into();
        assert_eq!(exit_code(&e), 2);
        let e: anyhow::Error = aerator_core::Error::Imbalanced { ratio: 0.01 }.into();
        assert_eq!(exit_code(&e.context("training")), 3);
        assert_eq!(exit_code(&fail(6, "bad")), 6);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}
