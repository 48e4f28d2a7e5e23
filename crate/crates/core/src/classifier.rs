//! Linear soft-margin SVM, evaluation metrics and stratified k-fold
//! cross-validation.
//!
//! Training solves the dual with SMO (second-order working-set selection).
//! With a linear kernel the gradient update only needs `x_t · Δw`, so each
//! iteration is `O(n)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::FeaturePoint;

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_C: f64 = 1.0;
const TOLERANCE: f64 = 1e-6;
const MAX_ITERS: usize = 100_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub w: [f64; 2],
    pub b: f64,
    /// Per-dimension `[min, max]` of the training set.
    pub scale: [[f64; 2]; 2],
    pub c: f64,
    pub version: u32,
}

impl LinearModel {
    /// Maps a raw feature vector into the training set's unit box.
    pub fn scale_point(&self, x: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|d| {
            let [lo, hi] = self.scale[d];
            if hi > lo {
                (x[d] - lo) / (hi - lo)
            } else {
                0.0
            }
        })
    }

    /// Signed decision value for a raw (unscaled) feature vector.
    pub fn decision(&self, x: [f64; 2]) -> f64 {
        let s = self.scale_point(x);
        self.w[0] * s[0] + self.w[1] * s[1] + self.b
    }
}

/// Predicted label and decision value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub margin: f64,
}

pub fn svm_predict(model: &LinearModel, point: &FeaturePoint) -> Prediction {
    let margin = model.decision(point.xy());
    Prediction {
        label: (margin > 0.0) as u8,
        margin,
    }
}

/// Solver diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub iterations: usize,
    /// Dual objective `½ αᵀQα − Σα` after every update.
    pub dual_objective: Vec<f64>,
}

pub fn svm_train(points: &[FeaturePoint], c: f64) -> Result<LinearModel> {
    svm_train_traced(points, c).map(|(m, _)| m)
}

pub fn svm_train_traced(points: &[FeaturePoint], c: f64) -> Result<(LinearModel, SolverTrace)> {
    if !(c > 0.0 && c.is_finite()) {
        return invalid("C must be positive");
    }
    let mut y = Vec::with_capacity(points.len());
    for p in points {
        match p.label {
            Some(0) => y.push(-1.0),
            Some(1) => y.push(1.0),
            _ => return invalid(format!("frame {} has no 0/1 label", p.frame)),
        }
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    let mut scale = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
    for p in points {
        for (d, v) in p.xy().into_iter().enumerate() {
            if !v.is_finite() {
                return invalid("features must be finite");
            }
            scale[d][0] = scale[d][0].min(v);
            scale[d][1] = scale[d][1].max(v);
        }
    }
    let mut model = LinearModel {
        w: [0.0; 2],
        b: 0.0,
        scale,
        c,
        version: MODEL_VERSION,
    };
    let x: Vec<[f64; 2]> = points.iter().map(|p| model.scale_point(p.xy())).collect();
    let (w, b, trace) = smo(&x, &y, c)?;
    model.w = w;
    model.b = b;
    Ok((model, trace))
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn smo(x: &[[f64; 2]], y: &[f64], c: f64) -> Result<([f64; 2], f64, SolverTrace)> {
    let n = x.len();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut w = [0.0f64; 2];
    let mut trace = SolverTrace::default();
    let kd: Vec<f64> = x.iter().map(|v| dot(*v, *v)).collect();
    let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);
    let objective = |alpha: &[f64], grad: &[f64]| 0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();

    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..n {
                if !low(alpha[t], y[t]) {
                    continue;
                }
                gmax2 = gmax2.max(y[t] * grad[t]);
                let diff = gmax + y[t] * grad[t];
                if diff > 0.0 {
                    let quad = (kd[i] + kd[t] - 2.0 * dot(x[i], x[t])).max(TAU);
                    let obj = -diff * diff / quad;
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 < TOLERANCE {
            break;
        }
        if trace.iterations >= MAX_ITERS {
            return Err(Error::NoConvergence {
                iterations: trace.iterations,
                objective: objective(&alpha, &grad),
            });
        }
        trace.iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * dot(x[i], x[j]);
        if y[i] != y[j] {
            let quad = (kd[i] + kd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kd[i] + kd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = ((alpha[i] - ai) * y[i], (alpha[j] - aj) * y[j]);
        let dw = [di * x[i][0] + dj * x[j][0], di * x[i][1] + dj * x[j][1]];
        w[0] += dw[0];
        w[1] += dw[1];
        for t in 0..n {
            grad[t] += y[t] * dot(x[t], dw);
        }
        trace.dual_objective.push(objective(&alpha, &grad));
    }

    // Bias from free vectors, or the midpoint of the feasible interval.
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    Ok((w, -rho, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold_std: Option<f64>,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            fold_mean: None,
            fold_std: None,
        }
    }
}

/// Confusion counts and metrics with label `1` as the positive class.
pub fn evaluate(predictions: &[u8], truth: &[u8]) -> Result<EvalReport> {
    if predictions.len() != truth.len() {
        return invalid(format!(
            "{} predictions for {} ground-truth labels",
            predictions.len(),
            truth.len()
        ));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fp, fn_, tn))
}

/// Stratified k-fold: counts are pooled over folds and `fold_mean` /
/// `fold_std` summarise per-fold accuracy.
pub fn cross_validate(points: &[FeaturePoint], folds: usize, c: f64, seed: u64) -> Result<EvalReport> {
    if folds < 2 {
        return invalid("cross-validation needs at least two folds");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![usize::MAX; points.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..points.len()).filter(|&i| points[i].label == Some(class)).collect();
        if idx.len() < folds {
            return invalid(format!(
                "class {class} has {} samples, need at least {folds} for {folds}-fold validation",
                idx.len()
            ));
        }
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    if fold_of.contains(&usize::MAX) {
        return invalid("every point needs a 0/1 label");
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut accs = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<FeaturePoint> = (0..points.len())
            .filter(|&i| fold_of[i] != f)
            .map(|i| points[i])
            .collect();
        let model = svm_train(&train, c)?;
        let (mut right, mut total) = (0usize, 0usize);
        for i in (0..points.len()).filter(|&i| fold_of[i] == f) {
            let p = svm_predict(&model, &points[i]).label;
            let t = points[i].label.unwrap();
            right += (p == t) as usize;
            total += 1;
            pred.push(p);
            truth.push(t);
        }
        accs.push(right as f64 / total as f64);
    }
    let mut report = evaluate(&pred, &truth)?;
    let mean = accs.iter().sum::<f64>() / folds as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / folds as f64;
    report.fold_mean = Some(mean);
    report.fold_std = Some(var.sqrt());
    Ok(report)
}
