//! Adaptive Gaussian mixture background subtraction.
//!
//! Each pixel keeps up to `max_components` Gaussians sorted by weight. A
//! sample matches the nearest component (by normalised squared distance)
//! within `var_threshold` variances. Components whose weight decays below the
//! complexity-prior floor are dropped, so quiet pixels converge to a single
//! Gaussian. The learning rate starts at `1/frames_seen` and settles at
//! `1/history`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imgproc::{BinaryImage, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureParams {
    pub max_components: usize,
    pub history: u32,
    /// Squared Mahalanobis gate for a match.
    pub var_threshold: f32,
    /// Cumulative weight that the background components must reach.
    pub background_ratio: f32,
    pub var_init: f32,
    pub var_min: f32,
    pub var_max: f32,
    /// Weight decay applied per frame, scaled by the learning rate.
    pub complexity_prior: f32,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            max_components: 5,
            history: 500,
            var_threshold: 16.0,
            background_ratio: 0.9,
            var_init: 15.0,
            var_min: 4.0,
            var_max: 75.0,
            complexity_prior: 0.05,
        }
    }
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_components == 0 || self.max_components > MAX_COMPONENTS {
            return invalid(format!("max_components must be in 1..={MAX_COMPONENTS}"));
        }
        if self.history == 0 {
            return invalid("history must be positive");
        }
        if !(self.var_min > 0.0 && self.var_min <= self.var_init && self.var_init <= self.var_max) {
            return invalid("variances must satisfy 0 < var_min <= var_init <= var_max");
        }
        if !(0.0..=1.0).contains(&self.background_ratio) || self.var_threshold <= 0.0 {
            return invalid("background_ratio must be in [0, 1] and var_threshold positive");
        }
        Ok(())
    }
}

const MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Component {
    pub weight: f32,
    pub mean: f32,
    pub var: f32,
}

#[derive(Debug, Clone)]
pub struct MixtureModel {
    params: MixtureParams,
    width: usize,
    height: usize,
    frames_seen: u64,
    comps: Vec<[Component; MAX_COMPONENTS]>,
    counts: Vec<u8>,
}

impl MixtureModel {
    pub fn new(width: usize, height: usize, params: MixtureParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 {
            return invalid("background model needs positive dimensions");
        }
        Ok(Self {
            params,
            width,
            height,
            frames_seen: 0,
            comps: vec![[Component::default(); MAX_COMPONENTS]; width * height],
            counts: vec![0; width * height],
        })
    }

    pub fn params(&self) -> &MixtureParams {
        &self.params
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Components of one pixel, heaviest first.
    pub fn components(&self, x: usize, y: usize) -> &[Component] {
        let i = y * self.width + x;
        &self.comps[i][..self.counts[i] as usize]
    }

    /// Returns the model to its cold state, keeping its parameters.
    pub fn reset(&mut self) {
        self.frames_seen = 0;
        self.counts.fill(0);
        for c in &mut self.comps {
            *c = [Component::default(); MAX_COMPONENTS];
        }
    }

    /// Learning rate the next update will use.
    pub fn learning_rate(&self) -> f32 {
        let n = (self.frames_seen + 1) as f32;
        (1.0 / n).max(1.0 / self.params.history as f32)
    }

    /// Updates the model with `frame` and returns the foreground mask
    /// (`255` foreground, `0` background).
    pub fn update<T: Copy + Into<f32>>(&mut self, frame: &Image<T>) -> Result<BinaryImage> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::DimensionMismatch {
                expected_width: self.width,
                expected_height: self.height,
                width: frame.width(),
                height: frame.height(),
            });
        }
        let alpha = self.learning_rate();
        self.frames_seen += 1;
        let p = self.params;
        let prune = alpha * p.complexity_prior;

        let mut mask = vec![0u8; self.width * self.height];
        for (i, &px) in frame.data().iter().enumerate() {
            let v: f32 = px.into();
            let n = self.counts[i] as usize;
            let comps = &mut self.comps[i];

            let mut matched = None;
            let mut best = f32::INFINITY;
            for (k, c) in comps[..n].iter().enumerate() {
                let d2 = (v - c.mean) * (v - c.mean);
                if d2 < p.var_threshold * c.var {
                    let score = d2 / c.var;
                    if score < best {
                        best = score;
                        matched = Some(k);
                    }
                }
            }
            let background = match matched {
                Some(m) => comps[..m].iter().map(|c| c.weight).sum::<f32>() < p.background_ratio,
                None => false,
            };

            let mut kept = 0;
            let mut total = 0.0;
            for k in 0..n {
                let mut c = comps[k];
                c.weight = (1.0 - alpha) * c.weight - prune;
                if Some(k) == matched {
                    c.weight += alpha;
                    let rho = (alpha / c.weight).min(1.0);
                    let d = v - c.mean;
                    c.mean += rho * d;
                    c.var = (c.var + rho * (d * d - c.var)).clamp(p.var_min, p.var_max);
                }
                if c.weight < prune {
                    continue;
                }
                comps[kept] = c;
                kept += 1;
                total += c.weight;
            }
            if matched.is_none() {
                let slot = kept.min(p.max_components - 1);
                if slot < kept {
                    total -= comps[slot].weight;
                }
                comps[slot] = Component {
                    weight: alpha,
                    mean: v,
                    var: p.var_init,
                };
                kept = slot + 1;
                total += alpha;
            }
            if total > 0.0 {
                for c in &mut comps[..kept] {
                    c.weight /= total;
                }
            }
            // Insertion sort by weight, descending.
            for k in 1..kept {
                let mut j = k;
                while j > 0 && comps[j].weight > comps[j - 1].weight {
                    comps.swap(j, j - 1);
                    j -= 1;
                }
            }
            self.counts[i] = kept as u8;
            if !background {
                mask[i] = 255;
            }
        }
        Image::from_vec(self.width, self.height, mask)
    }
}
