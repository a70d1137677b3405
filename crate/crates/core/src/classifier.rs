//! Multinomial logistic classifier over per-pixel feature vectors.
//!
//! Features are z-scored with training-set statistics, the regularization
//! strength is picked by k-fold cross-validation on a small subsample, and
//! the final model minimizes L2-regularized cross-entropy by full-batch
//! gradient descent with backtracking line search.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::FeatureCube;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, UNLABELED};

pub const MODEL_MAGIC: [u8; 4] = *b"PLM1";

/// Floor applied to every predicted probability.
pub const PROB_FLOOR: f64 = 1e-12;

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub train_fraction: f64,
    pub cv_samples: usize,
    pub cv_folds: usize,
    pub reg_grid: Vec<f64>,
    pub max_epochs: usize,
    pub tol: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.01,
            cv_samples: 200,
            cv_folds: 5,
            reg_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            max_epochs: 500,
            tol: 1e-8,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.cv_folds < 2 || self.cv_samples < self.cv_folds {
            return Err(Error::invalid(
                "need cv_samples >= cv_folds >= 2".to_string(),
            ));
        }
        if self.reg_grid.is_empty() || self.reg_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid(
                "regularization grid must hold positive values",
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        Ok(())
    }
}

/// Training pixels (flat row-major indices, ascending) and their labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub num_classes: u8,
    pub indices: Vec<usize>,
    pub labels: Vec<u8>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Stratified uniform sample of labeled pixels.
///
/// One pixel per class is drawn first so every class is represented; the
/// rest of the `round(fraction * labeled)` budget is filled uniformly from
/// the remaining labeled pixels.
pub fn sample_training_set(labels: &LabelMap, cfg: &TrainConfig) -> Result<TrainingSet> {
    cfg.validate()?;
    let k = labels.num_classes() as usize;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for (i, &l) in labels.as_slice().iter().enumerate() {
        if l != UNLABELED {
            by_class[l as usize].push(i);
        }
    }
    if let Some(empty) = (1..=k).find(|&c| by_class[c].is_empty()) {
        return Err(Error::invalid(format!(
            "class {empty} has no labeled pixels"
        )));
    }
    let labeled: usize = by_class.iter().skip(1).map(Vec::len).sum();
    let budget = ((cfg.train_fraction * labeled as f64).round() as usize).clamp(k, labeled);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut chosen = vec![false; labels.len()];
    let mut picked = Vec::with_capacity(budget);
    for pixels in &by_class[1..] {
        let &i = pixels.choose(&mut rng).expect("class is non-empty");
        chosen[i] = true;
        picked.push(i);
    }
    let mut rest: Vec<usize> = labels
        .labeled_indices()
        .into_iter()
        .filter(|&i| !chosen[i])
        .collect();
    rest.shuffle(&mut rng);
    picked.extend(rest.into_iter().take(budget - k));
    picked.sort_unstable();

    let class_of = labels.as_slice();
    Ok(TrainingSet {
        num_classes: k as u8,
        labels: picked.iter().map(|&i| class_of[i]).collect(),
        indices: picked,
    })
}

/// Frozen linear model with its standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `num_classes x dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl LinearModel {
    pub fn validate(&self) -> Result<()> {
        let (k, c) = (self.num_classes, self.dim);
        if k < 2 || c == 0 {
            return Err(Error::invalid(format!("model shape {k}x{c} is degenerate")));
        }
        if self.weights.len() != k * c
            || self.biases.len() != k
            || self.feature_mean.len() != c
            || self.feature_scale.len() != c
        {
            return Err(Error::invalid("model parameter lengths do not match shape"));
        }
        let all = self
            .weights
            .iter()
            .chain(&self.biases)
            .chain(&self.feature_mean)
            .chain(&self.feature_scale);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::invariant("model parameters must be finite"));
        }
        if self.feature_scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::invariant("feature scales must be positive"));
        }
        Ok(())
    }

    fn standardize(&self, z: impl Iterator<Item = f64>, out: &mut [f64]) {
        for ((o, v), (m, s)) in out
            .iter_mut()
            .zip(z)
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
        {
            *o = (v - m) / s;
        }
    }

    /// Class scores for one standardized feature vector.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        scores(&self.weights, &self.biases, x)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MODEL_MAGIC);
        buf.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in self
            .weights
            .iter()
            .chain(&self.biases)
            .chain(&self.feature_mean)
            .chain(&self.feature_scale)
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
            return Err(Error::format("bad magic: not a PLM1 model file"));
        }
        if bytes.len() < 12 {
            return Err(Error::format("truncated model header"));
        }
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = k * c + k + 2 * c;
        let payload = &bytes[12..];
        if payload.len() != 8 * count {
            return Err(Error::format(format!(
                "model payload has {} bytes, expected {}",
                payload.len(),
                8 * count
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<_>>();
        let model = Self {
            num_classes: k,
            dim: c,
            weights: take(k * c),
            biases: take(k),
            feature_mean: take(c),
            feature_scale: take(c),
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &LinearModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearModel> {
    LinearModel::from_bytes(&fs::read(path)?)
}

fn scores(weights: &[f64], biases: &[f64], x: &[f64]) -> Vec<f64> {
    let c = x.len();
    biases
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let row = &weights[k * c..(k + 1) * c];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

/// Normalized exponential with max-subtraction, floored at [`PROB_FLOOR`].
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter()
        .map(|e| (e / total).max(PROB_FLOOR))
        .collect()
}

/// What training decided along the way.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub lambda: f64,
    /// Mean held-out accuracy per grid entry, in grid order.
    pub cv_accuracy: Vec<f64>,
    pub cv_samples_used: usize,
    /// Objective value after each accepted epoch (first entry is the start).
    pub objective_history: Vec<f64>,
}

struct Dataset<'a> {
    x: &'a [f64],
    y: &'a [usize],
    dim: usize,
    classes: usize,
}

struct Fit {
    weights: Vec<f64>,
    biases: Vec<f64>,
    history: Vec<f64>,
}

/// Mean cross-entropy plus `lambda / 2 * |W|^2`, and optionally its gradient.
fn objective(
    data: &Dataset<'_>,
    rows: &[usize],
    weights: &[f64],
    biases: &[f64],
    lambda: f64,
    grad: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let (c, k) = (data.dim, data.classes);
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = grad;
    if let Some((gw, gb)) = grad.as_mut() {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
    }
    for &r in rows {
        let x = &data.x[r * c..(r + 1) * c];
        let s = scores(weights, biases, x);
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let target = data.y[r];
        loss += log_norm - s[target];
        if let Some((gw, gb)) = grad.as_mut() {
            for j in 0..k {
                let p = (s[j] - log_norm).exp();
                let coeff = (p - if j == target { 1.0 } else { 0.0 }) / n;
                gb[j] += coeff;
                for (g, v) in gw[j * c..(j + 1) * c].iter_mut().zip(x) {
                    *g += coeff * v;
                }
            }
        }
    }
    let penalty: f64 = weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * lambda;
    if let Some((gw, _)) = grad.as_mut() {
        for (g, w) in gw.iter_mut().zip(weights) {
            *g += lambda * w;
        }
    }
    loss / n + penalty
}

fn fit(data: &Dataset<'_>, rows: &[usize], lambda: f64, max_epochs: usize, tol: f64) -> Fit {
    let (c, k) = (data.dim, data.classes);
    let mut w = vec![0.0; k * c];
    let mut b = vec![0.0; k];
    let mut gw = vec![0.0; k * c];
    let mut gb = vec![0.0; k];
    let mut f = objective(data, rows, &w, &b, lambda, Some((&mut gw, &mut gb)));
    let mut history = vec![f];
    let mut step = 1.0;
    let mut trial_w = vec![0.0; k * c];
    let mut trial_b = vec![0.0; k];

    for _ in 0..max_epochs {
        let gnorm2: f64 = gw.iter().chain(&gb).map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((t, p), g) in trial_w.iter_mut().zip(&w).zip(&gw) {
                *t = p - step * g;
            }
            for ((t, p), g) in trial_b.iter_mut().zip(&b).zip(&gb) {
                *t = p - step * g;
            }
            let f_trial = objective(data, rows, &trial_w, &trial_b, lambda, None);
            if f_trial <= f - ARMIJO_C * step * gnorm2 {
                accepted = Some(f_trial);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else { break };
        std::mem::swap(&mut w, &mut trial_w);
        std::mem::swap(&mut b, &mut trial_b);
        let decrease = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
        f = objective(data, rows, &w, &b, lambda, Some((&mut gw, &mut gb)));
        history.push(f);
        if decrease < tol {
            break;
        }
        step *= 2.0;
    }
    Fit {
        weights: w,
        biases: b,
        history,
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Train and return the model alone.
pub fn train(features: &FeatureCube, set: &TrainingSet, cfg: &TrainConfig) -> Result<LinearModel> {
    train_with_report(features, set, cfg).map(|(m, _)| m)
}

/// Train, also reporting the cross-validation outcome and objective trace.
pub fn train_with_report(
    features: &FeatureCube,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainReport)> {
    cfg.validate()?;
    let k = set.num_classes as usize;
    if k < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    if set.is_empty() || set.indices.len() != set.labels.len() {
        return Err(Error::invalid("training set is empty or inconsistent"));
    }
    let (h, w, c) = features.as_array().dim();
    let arr = features.as_array();
    let mut x = Vec::with_capacity(set.len() * c);
    let mut y = Vec::with_capacity(set.len());
    for (&idx, &label) in set.indices.iter().zip(&set.labels) {
        if idx >= h * w {
            return Err(Error::invalid(format!("training index {idx} out of range")));
        }
        if label == UNLABELED || label as usize > k {
            return Err(Error::invalid(format!(
                "training label {label} out of range"
            )));
        }
        let (r, col) = (idx / w, idx % w);
        for ch in 0..c {
            let v = arr[[r, col, ch]];
            if !v.is_finite() {
                return Err(Error::invariant(format!(
                    "non-finite feature at pixel {idx}"
                )));
            }
            x.push(v);
        }
        y.push(label as usize - 1);
    }

    let n = y.len();
    let mut mean = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .into_iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    for row in x.chunks_exact_mut(c) {
        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&scale) {
            *v = (*v - m) / s;
        }
    }

    let data = Dataset {
        x: &x,
        y: &y,
        dim: c,
        classes: k,
    };

    let mut grid = cfg.reg_grid.clone();
    grid.sort_by(|a, b| a.total_cmp(b));

    // Cross-validation subsample.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.truncate(cfg.cv_samples.min(n));
    let folds = cfg.cv_folds.min(order.len());
    let mut cv_accuracy = Vec::with_capacity(grid.len());
    if folds >= 2 {
        for &lambda in &grid {
            let mut acc_sum = 0.0;
            for fold in 0..folds {
                let (held, kept): (Vec<(usize, usize)>, Vec<(usize, usize)>) = order
                    .iter()
                    .copied()
                    .enumerate()
                    .partition(|(pos, _)| pos % folds == fold);
                let kept: Vec<usize> = kept.into_iter().map(|(_, r)| r).collect();
                let fitted = fit(&data, &kept, lambda, cfg.max_epochs, cfg.tol);
                let correct = held
                    .iter()
                    .filter(|&&(_, r)| {
                        let s = scores(&fitted.weights, &fitted.biases, &x[r * c..(r + 1) * c]);
                        argmax(&s) == y[r]
                    })
                    .count();
                acc_sum += correct as f64 / held.len() as f64;
            }
            cv_accuracy.push(acc_sum / folds as f64);
        }
    }
    let mut chosen = 0;
    for (i, &acc) in cv_accuracy.iter().enumerate() {
        if acc > cv_accuracy[chosen] {
            chosen = i;
        }
    }
    let lambda = grid[chosen];

    let all: Vec<usize> = (0..n).collect();
    let fitted = fit(&data, &all, lambda, cfg.max_epochs, cfg.tol);
    let model = LinearModel {
        num_classes: k,
        dim: c,
        weights: fitted.weights,
        biases: fitted.biases,
        feature_mean: mean,
        feature_scale: scale,
    };
    model.validate()?;
    let report = TrainReport {
        lambda,
        cv_accuracy,
        cv_samples_used: order.len(),
        objective_history: fitted.history,
    };
    Ok((model, report))
}

/// Per-pixel class probabilities, row-major pixels, classes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl ProbabilityField {
    pub fn new(height: usize, width: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || num_classes == 0 {
            return Err(Error::invalid("empty probability field"));
        }
        if probs.len() != height * width * num_classes {
            return Err(Error::invalid("probability buffer does not match shape"));
        }
        for (i, px) in probs.chunks_exact(num_classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| !(PROB_FLOOR..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invariant(format!(
                    "pixel {i} is not a probability vector"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            probs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.probs[idx * self.num_classes..(idx + 1) * self.num_classes]
    }

    /// Most probable class per pixel (1-based), ties to the smaller id.
    pub fn argmax_labels(&self) -> LabelMap {
        let labels = self
            .probs
            .chunks_exact(self.num_classes)
            .map(|p| (argmax(p) + 1) as u8)
            .collect();
        LabelMap::new(self.height, self.width, self.num_classes as u8, labels)
            .expect("argmax labels are in range")
    }
}

pub fn predict_probabilities(
    model: &LinearModel,
    features: &FeatureCube,
) -> Result<ProbabilityField> {
    let (h, w, c) = features.as_array().dim();
    if c != model.dim {
        return Err(Error::invalid(format!(
            "feature dimension {c} does not match model dimension {}",
            model.dim
        )));
    }
    let arr = features.as_array();
    let k = model.num_classes;
    let probs: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut x = vec![0.0; c];
            let mut row = Vec::with_capacity(w * k);
            for col in 0..w {
                model.standardize((0..c).map(|ch| arr[[r, col, ch]]), &mut x);
                row.extend(softmax(&model.scores(&x)));
            }
            row
        })
        .collect();
    Ok(ProbabilityField {
        height: h,
        width: w,
        num_classes: k,
        probs,
    })
}
