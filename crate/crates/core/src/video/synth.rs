//! Synthetic surveillance scenes with exact on/off ground truth.
//!
//! A scene is a smooth "water" background with a machine body inside
//! `object_box`. The body is a static irregular checker (strong corners) while
//! the machine is off. While it is on, the box and a 10 % margin around it
//! are covered by a bright spray texture that rotates about the box centre at
//! roughly 1.5 px/frame at the rim, with fresh fine-grained noise every frame.

use std::f32::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, Frame, Video, VideoMeta, VideoWriter};
use crate::error::{invalid, Result};
use crate::imgproc::{round_to_u8, BBox, FloatImage, Image};

/// Jitter offsets are drawn from {-1, 0, 1} per axis.
const JITTER: usize = 1;
const SPRAY_SCALE: f64 = 1.2;
const PEDESTRIAN_SPEED: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    /// Static background.
    Flat,
    /// Travelling sinusoidal ripple over the water.
    Ripple,
    /// Whole-frame translation of at most 2 px between frames.
    Jitter,
    /// A dark blob crossing the scene, never touching the object box.
    Pedestrian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScene {
    pub meta: VideoMeta,
    pub object_box: BBox,
    /// Half-open `[start, end)` frame ranges in which the machine runs.
    pub on_intervals: Vec<[u32; 2]>,
    pub background_kind: BackgroundKind,
    /// Drives per-frame randomness: spray noise, jitter, pedestrian phase.
    pub seed: u64,
    /// Drives the static look (water and machine body). Defaults to `seed`;
    /// set it to re-shoot the same scene with new dynamics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance_seed: Option<u64>,
}

/// Sidecar ground truth written next to every synthetic video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub on_intervals: Vec<[u32; 2]>,
    pub object_box: BBox,
}

impl GroundTruth {
    pub fn is_on(&self, frame: u64) -> bool {
        self.on_intervals
            .iter()
            .any(|&[a, b]| frame >= a as u64 && frame < b as u64)
    }

    /// Per-frame 0/1 labels for `n` frames.
    pub fn labels(&self, n: usize) -> Vec<u8> {
        (0..n as u64).map(|i| self.is_on(i) as u8).collect()
    }

    /// Frame indices at which the state changes, within `n` frames.
    pub fn transitions(&self, n: usize) -> Vec<u64> {
        let mut t = Vec::new();
        for &[a, b] in &self.on_intervals {
            if a > 0 && (a as usize) < n {
                t.push(a as u64);
            }
            if (b as usize) < n {
                t.push(b as u64);
            }
        }
        t
    }
}

/// `<video>.labels.json`
pub fn labels_path(video: impl AsRef<Path>) -> PathBuf {
    let mut s = video.as_ref().as_os_str().to_owned();
    s.push(".labels.json");
    PathBuf::from(s)
}

impl SynthScene {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            on_intervals: self.on_intervals.clone(),
            object_box: self.object_box,
        }
    }

    /// The spray footprint: the object box grown by 10 % per side.
    pub fn spray_box(&self) -> BBox {
        let (w, h) = self.meta.dims();
        self.object_box.scale(SPRAY_SCALE, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let (w, h) = self.meta.dims();
        let b = self.object_box;
        if b.w < 8 || b.h < 8 || !b.fits_in(w, h) {
            return invalid(format!("object_box {b:?} must be at least 8x8 and inside {w}x{h}"));
        }
        let mut prev_end = 0u32;
        for (i, &[a, e]) in self.on_intervals.iter().enumerate() {
            if a >= e {
                return invalid(format!("on_intervals[{i}] is empty or reversed"));
            }
            if i > 0 && a < prev_end {
                return invalid(format!("on_intervals[{i}] overlaps or is out of order"));
            }
            if e > self.meta.frame_count {
                return invalid(format!("on_intervals[{i}] ends past frame_count"));
            }
            prev_end = e;
        }
        if self.background_kind == BackgroundKind::Pedestrian && self.pedestrian_lane().is_none() {
            return invalid("object box leaves no room for a pedestrian lane");
        }
        Ok(())
    }

    fn pedestrian_size(&self) -> (usize, usize) {
        let h = self.meta.height as usize;
        ((h / 40).max(6), (h / 16).max(16))
    }

    /// Top row of the horizontal band the pedestrian walks along.
    fn pedestrian_lane(&self) -> Option<usize> {
        let (_, ph) = self.pedestrian_size();
        let h = self.meta.height as usize;
        let pad = (h / 12).max(2);
        let s = self.spray_box().expand(4 + JITTER, self.meta.width as usize, h);
        let lanes = [pad, h.saturating_sub(ph + pad)];
        lanes
            .into_iter()
            .filter(|&y| y + ph <= h && (y + ph <= s.y || y >= s.bottom()))
            .max_by_key(|&y| {
                let c = y + ph / 2;
                let sc = s.y + s.h / 2;
                c.abs_diff(sc)
            })
    }

    /// Pedestrian footprint in frame `t`, if visible (before jitter).
    pub fn pedestrian_box(&self, t: u64) -> Option<BBox> {
        if self.background_kind != BackgroundKind::Pedestrian {
            return None;
        }
        let lane = self.pedestrian_lane()?;
        let (pw, ph) = self.pedestrian_size();
        let w = self.meta.width as usize;
        let period = w + pw + w / 2;
        let phase = (mix_seed(self.seed, u64::MAX) % period as u64) as usize;
        let pos = (phase + PEDESTRIAN_SPEED * t as usize) % period;
        // pos in [0, pw) enters from the left edge.
        let left = pos as isize - pw as isize;
        let x0 = left.max(0) as usize;
        let x1 = ((left + pw as isize).max(0) as usize).min(w);
        (x1 > x0).then(|| BBox::new(x0, lane, x1 - x0, ph))
    }

    pub fn render_all(&self) -> Result<Video> {
        self.validate()?;
        let r = Renderer::new(self);
        let frames = (0..self.meta.frame_count as u64).map(|t| r.frame(t)).collect();
        Ok(Video {
            meta: self.meta,
            frames,
        })
    }
}

/// Renders `scene` to `path` and writes the ground-truth sidecar next to it.
pub fn synth_scene(scene: &SynthScene, path: impl AsRef<Path>) -> Result<GroundTruth> {
    scene.validate()?;
    let path = path.as_ref();
    let r = Renderer::new(scene);
    let mut writer = VideoWriter::new(BufWriter::new(File::create(path)?), scene.meta)?;
    for t in 0..scene.meta.frame_count as u64 {
        writer.write_frame(&r.frame(t))?;
    }
    writer.finish()?;
    let truth = scene.ground_truth();
    serde_json::to_writer_pretty(BufWriter::new(File::create(labels_path(path))?), &truth)?;
    Ok(truth)
}

struct Renderer<'a> {
    scene: &'a SynthScene,
    /// Background over the jitter-padded canvas.
    base: FloatImage,
    /// Machine body texture, object-box sized.
    body: FloatImage,
}

impl<'a> Renderer<'a> {
    fn new(scene: &'a SynthScene) -> Self {
        let (w, h) = scene.meta.dims();
        let (cw, ch) = (w + 2 * JITTER, h + 2 * JITTER);
        let mut rng = ChaCha8Rng::seed_from_u64(scene.appearance_seed.unwrap_or(scene.seed));

        // Smooth low-contrast water: two sinusoids plus bilinear value noise.
        let (p1, p2, p3) = (
            rng.random::<f32>() * 6.0,
            rng.random::<f32>() * 6.0,
            rng.random::<f32>() * 6.0,
        );
        let cell = 48usize;
        let gw = cw / cell + 2;
        let gh = ch / cell + 2;
        let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-10.0..10.0)).collect();
        let base = Image::from_fn(cw, ch, |x, y| {
            let (fx, fy) = (x as f32 / cell as f32, y as f32 / cell as f32);
            let (ix, iy) = (fx as usize, fy as usize);
            let (ax, ay) = (fx - ix as f32, fy - iy as f32);
            let g = |i: usize, j: usize| grid[j * gw + i];
            let noise = g(ix, iy) * (1.0 - ax) * (1.0 - ay)
                + g(ix + 1, iy) * ax * (1.0 - ay)
                + g(ix, iy + 1) * (1.0 - ax) * ay
                + g(ix + 1, iy + 1) * ax * ay;
            95.0 + 14.0 * (x as f32 / 29.0 + p1).sin() * (y as f32 / 37.0 + p2).cos()
                + 6.0 * ((x + y) as f32 / 57.0 + p3).sin()
                + noise
        });

        let b = scene.object_box;
        // Irregular checker: cell edges are jittered so no shift by a whole
        // cell realigns the pattern.
        let cell = (b.w.min(b.h) / 4).max(4);
        let mut cuts = |len: usize| -> Vec<usize> {
            let mut edges = vec![0];
            while *edges.last().unwrap() < len {
                let step = rng.random_range(cell / 2..=cell + cell / 2).max(2);
                edges.push(edges.last().unwrap() + step);
            }
            edges
        };
        let xs = cuts(b.w);
        let ys = cuts(b.h);
        let (cols, rows) = (xs.len() - 1, ys.len() - 1);
        let shades: Vec<f32> = (0..cols * rows)
            .map(|i| {
                let (cx, cy) = (i % cols, i / cols);
                if (cx + cy) % 2 == 0 {
                    35.0 + rng.random_range(0.0..25.0)
                } else {
                    185.0 + rng.random_range(0.0..50.0)
                }
            })
            .collect();
        let index = |edges: &[usize], v: usize| edges.partition_point(|&e| e <= v) - 1;
        let body = Image::from_fn(b.w, b.h, |x, y| shades[index(&ys, y) * cols + index(&xs, x)]);

        Self { scene, base, body }
    }

    fn frame(&self, t: u64) -> Frame {
        let s = self.scene;
        let (w, h) = s.meta.dims();
        let mut canvas = self.base.clone();
        let cw = canvas.width();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(s.seed, t));

        if s.background_kind == BackgroundKind::Ripple {
            let phase = 0.35 * t as f32;
            let data = canvas.data_mut();
            for (i, v) in data.iter_mut().enumerate() {
                let (x, y) = ((i % cw) as f32, (i / cw) as f32);
                *v += 7.0 * (2.0 * PI * (x / 40.0 + y / 55.0) - phase).sin();
            }
        }

        let on = s.ground_truth().is_on(t);
        let b = s.object_box;
        for y in 0..b.h {
            for x in 0..b.w {
                canvas.set(b.x + x + JITTER, b.y + y + JITTER, self.body.get(x, y));
            }
        }
        if on {
            let sp = s.spray_box();
            let (cx, cy) = b.center();
            let half = (b.w.min(b.h) as f32 / 2.0).max(4.0);
            let omega = 9.0 / half;
            let wavelength = (b.w.min(b.h) as f32 / 3.0).max(6.0);
            for y in sp.y..sp.bottom() {
                for x in sp.x..sp.right() {
                    let dx = x as f32 + 0.5 - cx as f32;
                    let dy = y as f32 + 0.5 - cy as f32;
                    let r = (dx * dx + dy * dy).sqrt();
                    let theta = dy.atan2(dx);
                    let v = 160.0
                        + 75.0 * (6.0 * theta + 2.0 * PI * r / wavelength - omega * t as f32).sin()
                        + rng.random_range(-12.0..12.0);
                    canvas.set(x + JITTER, y + JITTER, v);
                }
            }
        }

        if let Some(p) = s.pedestrian_box(t) {
            let (pw, ph) = s.pedestrian_size();
            // Ellipse centred on the full (unclipped) footprint.
            let right = p.right();
            let left = right as f32 - pw as f32;
            let (ex, ey) = (left + pw as f32 / 2.0, p.y as f32 + ph as f32 / 2.0);
            let (rx, ry) = (pw as f32 / 2.0, ph as f32 / 2.0);
            for y in p.y..p.bottom() {
                for x in p.x..right {
                    let nx = (x as f32 + 0.5 - ex) / rx;
                    let ny = (y as f32 + 0.5 - ey) / ry;
                    if nx * nx + ny * ny <= 1.0 {
                        canvas.set(x + JITTER, y + JITTER, 40.0);
                    }
                }
            }
        }

        let (ox, oy) = if s.background_kind == BackgroundKind::Jitter {
            let mut jr = ChaCha8Rng::seed_from_u64(mix_seed(s.seed ^ 0x4a17, t));
            (jr.random_range(0..=2 * JITTER), jr.random_range(0..=2 * JITTER))
        } else {
            (JITTER, JITTER)
        };
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &canvas.row(y + oy)[ox..ox + w];
            px.extend(row.iter().map(|&v| round_to_u8(v)));
        }
        Frame::new(t, Image::from_vec(w, h, px).expect("frame dims"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(kind: BackgroundKind) -> SynthScene {
        SynthScene {
            meta: VideoMeta {
                width: 160,
                height: 120,
                fps: 25,
                frame_count: 30,
            },
            object_box: BBox::new(60, 20, 32, 32),
            on_intervals: vec![[10, 20]],
            background_kind: kind,
            seed: 3,
            appearance_seed: None,
        }
    }

    #[test]
    fn labels_follow_intervals() {
        let mut s = scene(BackgroundKind::Flat);
        s.meta.frame_count = 300;
        s.on_intervals = vec![[100, 200]];
        let l = s.ground_truth().labels(300);
        assert!(l[..100].iter().all(|&v| v == 0));
        assert!(l[100..200].iter().all(|&v| v == 1));
        assert!(l[200..].iter().all(|&v| v == 0));
        assert_eq!(s.ground_truth().transitions(300), vec![100, 200]);
    }

    #[test]
    fn flat_off_frames_are_identical_and_on_frames_differ() {
        let v = scene(BackgroundKind::Flat).render_all().unwrap();
        assert_eq!(v.frames[0].image, v.frames[5].image);
        assert_eq!(v.frames[0].image, v.frames[25].image);
        assert_ne!(v.frames[11].image, v.frames[12].image);
        // Outside the spray footprint nothing changes.
        let sp = scene(BackgroundKind::Flat).spray_box();
        for y in 0..120 {
            for x in 0..160 {
                if !sp.contains(x as f64, y as f64) {
                    assert_eq!(v.frames[0].image.get(x, y), v.frames[15].image.get(x, y));
                }
            }
        }
    }

    #[test]
    fn jitter_is_a_small_translation() {
        let s = scene(BackgroundKind::Jitter);
        let v = s.render_all().unwrap();
        let flat = scene(BackgroundKind::Flat).render_all().unwrap();
        let b = s.object_box;
        for f in &v.frames[..10] {
            // Find the offset that reproduces the flat frame inside the box.
            let found = (-2i32..=2)
                .flat_map(|dy| (-2i32..=2).map(move |dx| (dx, dy)))
                .find(|&(dx, dy)| {
                    (0..b.h).all(|y| {
                        (0..b.w).all(|x| {
                            let fx = (b.x + x) as i32 + dx;
                            let fy = (b.y + y) as i32 + dy;
                            f.image.get(fx as usize, fy as usize) == flat.frames[0].image.get(b.x + x, b.y + y)
                        })
                    })
                });
            let (dx, dy) = found.expect("frame is a translate of the flat scene");
            assert!(dx.abs() <= 1 && dy.abs() <= 1);
        }
    }

    #[test]
    fn pedestrian_never_touches_object() {
        let mut s = scene(BackgroundKind::Pedestrian);
        s.meta.frame_count = 200;
        s.on_intervals.clear();
        let mut seen = 0;
        for t in 0..200 {
            if let Some(p) = s.pedestrian_box(t) {
                seen += 1;
                assert!(!p.intersects(&s.object_box));
                assert!(p.fits_in(160, 120));
            }
        }
        assert!(seen > 20);
    }

    #[test]
    fn invalid_scenes_are_rejected() {
        let mut s = scene(BackgroundKind::Flat);
        s.object_box = BBox::new(150, 100, 32, 32);
        assert!(s.validate().is_err());
        let mut s = scene(BackgroundKind::Flat);
        s.on_intervals = vec![[10, 20], [15, 25]];
        assert!(s.validate().is_err());
        let mut s = scene(BackgroundKind::Flat);
        s.on_intervals = vec![[10, 31]];
        assert!(s.validate().is_err());
    }

    #[test]
    fn rendering_is_seed_deterministic() {
        let a = scene(BackgroundKind::Ripple).render_all().unwrap();
        let b = scene(BackgroundKind::Ripple).render_all().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_intervals_give_static_video() {
        let mut s = scene(BackgroundKind::Flat);
        s.on_intervals.clear();
        let v = s.render_all().unwrap();
        assert!(v.frames.iter().all(|f| f.image == v.frames[0].image));
    }

    #[test]
    fn sidecar_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.rgv");
        let truth = synth_scene(&scene(BackgroundKind::Flat), &p).unwrap();
        let back: GroundTruth = serde_json::from_reader(File::open(labels_path(&p)).unwrap()).unwrap();
        assert_eq!(back, truth);
        let raw = std::fs::read_to_string(labels_path(&p)).unwrap();
        assert!(raw.contains("\"object_box\""));
        assert_eq!(super::super::read_video_all(&p).unwrap().frames.len(), 30);
    }
}
