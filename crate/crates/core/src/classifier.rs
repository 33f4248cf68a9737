//! Whole-image classification of transform images.
//!
//! The baseline model average-pools a transform image onto a coarse grid,
//! standardizes the pooled features with training statistics and applies a
//! multinomial logistic (softmax) layer. Training uses adaptive-moment
//! mini-batch descent with L2 weight decay, a sigmoid learning-rate decay,
//! per-epoch shuffling and early stopping on validation accuracy.

use std::fmt::Debug;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PoleSample;
use crate::error::{Error, Result};
use crate::scalar::Voxel;
use crate::transform::{transform_into, OffsetTable, TransformConfig, TransformImage};
use crate::volume::Volume;

/// Floating-point type usable for model parameters.
pub trait Real: Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + 'static {}

#[inline]
fn real<F: Real>(v: f64) -> F {
    F::from_f64(v).expect("representable")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub pool_rows: usize,
    pub pool_cols: usize,
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            pool_rows: 40,
            pool_cols: 16,
            standardize: true,
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        self.pool_rows * self.pool_cols
    }

    pub fn check_image(&self, rows: usize, cols: usize) -> Result<()> {
        if self.pool_rows == 0 || self.pool_cols == 0 {
            return Err(Error::Config("pooling grid must be non-empty".into()));
        }
        if self.pool_rows > rows || self.pool_cols > cols {
            return Err(Error::Config(format!(
                "pooling grid {}×{} exceeds image {rows}×{cols}",
                self.pool_rows, self.pool_cols
            )));
        }
        Ok(())
    }
}

/// Window index of every position when `len` positions are split into
/// `bins` windows of `len / bins`, the last one absorbing the remainder.
fn window_map(len: usize, bins: usize) -> Vec<usize> {
    let width = len / bins;
    (0..len).map(|i| (i / width).min(bins - 1)).collect()
}

/// Window means of a row-major `rows×cols` buffer, written to `out` (row-major
/// over the pooling grid).
pub fn pool_buffer<T: Voxel>(data: &[T], rows: usize, cols: usize, cfg: &FeatureConfig, out: &mut [f64]) -> Result<()> {
    cfg.check_image(rows, cols)?;
    if data.len() != rows * cols || out.len() != cfg.dim() {
        return Err(Error::SizeMismatch(format!(
            "pooling {} values as {rows}×{cols} into {} features",
            data.len(),
            out.len()
        )));
    }
    let row_width = rows / cfg.pool_rows;
    let col_bins = window_map(cols, cfg.pool_cols);
    let mut col_counts = vec![0usize; cfg.pool_cols];
    for &b in &col_bins {
        col_counts[b] += 1;
    }
    // Rows of one band are summed lane-wise first, then folded into windows.
    let mut lanes = vec![0.0f64; cols];
    for (rb, acc) in out.chunks_exact_mut(cfg.pool_cols).enumerate() {
        let start = rb * row_width;
        let end = if rb + 1 == cfg.pool_rows {
            rows
        } else {
            start + row_width
        };
        lanes.fill(0.0);
        for row in data[start * cols..end * cols].chunks_exact(cols) {
            for (lane, &v) in lanes.iter_mut().zip(row) {
                *lane += v.widen();
            }
        }
        acc.fill(0.0);
        for (&lane, &cb) in lanes.iter().zip(&col_bins) {
            acc[cb] += lane;
        }
        let band = (end - start) as f64;
        for (v, &count) in acc.iter_mut().zip(&col_counts) {
            *v /= band * count as f64;
        }
    }
    Ok(())
}

/// Average-pools a transform image onto the configured grid.
pub fn pool_features<T: Voxel, F: Real>(img: &TransformImage<T>, cfg: &FeatureConfig) -> Result<Vec<F>> {
    let mut acc = vec![0.0; cfg.dim()];
    pool_buffer(&img.data, img.rows, img.cols, cfg, &mut acc)?;
    Ok(acc.into_iter().map(real).collect())
}

/// Per-feature mean and standard deviation of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics of the rows of `set`; zero-variance features get std 1.
    pub fn fit<F: Real>(set: &FeatureSet<F>) -> Self {
        let n = set.len().max(1) as f64;
        let mut mean = vec![0.0; set.dim];
        for row in set.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.to_f64().unwrap();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; set.dim];
        for row in set.rows() {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.to_f64().unwrap() - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply<F: Real>(&self, features: &mut [F]) {
        for ((f, m), s) in features.iter_mut().zip(&self.mean).zip(&self.std) {
            *f = real((f.to_f64().unwrap() - m) / s);
        }
    }
}

/// A labeled feature matrix, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<F> {
    pub dim: usize,
    pub n_classes: usize,
    pub features: Vec<F>,
    pub labels: Vec<u8>,
}

impl<F: Real> FeatureSet<F> {
    pub fn new(dim: usize, n_classes: usize) -> Self {
        Self {
            dim,
            n_classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn push(&mut self, features: &[F], label: u8) {
        assert_eq!(features.len(), self.dim);
        self.features.extend_from_slice(features);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &FeatureSet<F>) {
        assert_eq!(self.dim, other.dim);
        self.n_classes = self.n_classes.max(other.n_classes);
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.dim, self.n_classes);
        for &i in indices {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    pub fn standardized(&self, norm: &NormStats) -> Self {
        let mut out = self.clone();
        for row in out.features.chunks_exact_mut(self.dim) {
            norm.apply(row);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Transforms `vol` about every sample pole and pools the images.
pub fn extract_features<T: Voxel, F: Real>(
    vol: &Volume<T>,
    samples: &[PoleSample],
    cfg_t: TransformConfig,
    fcfg: &FeatureConfig,
    n_classes: usize,
) -> Result<FeatureSet<F>> {
    cfg_t.validate()?;
    let table = OffsetTable::for_volume(vol);
    let rows = cfg_t.n_slices * vol.rows();
    let cols = vol.cols();
    fcfg.check_image(rows, cols)?;
    let dim = fcfg.dim();
    let pooled: Vec<Vec<f64>> = samples
        .par_iter()
        .map_init(
            || vec![T::zero(); rows * cols],
            |buf, s| -> Result<Vec<f64>> {
                transform_into(vol, s.pole, cfg_t, &table, buf)?;
                let mut out = vec![0.0; dim];
                pool_buffer(buf, rows, cols, fcfg, &mut out)?;
                Ok(out)
            },
        )
        .collect::<Result<_>>()?;
    let mut set = FeatureSet::new(dim, n_classes);
    for (row, s) in pooled.iter().zip(samples) {
        if s.label as usize >= n_classes {
            return Err(Error::Config(format!("sample label {} ≥ {n_classes} classes", s.label)));
        }
        let row: Vec<F> = row.iter().map(|&v| real(v)).collect();
        set.push(&row, s.label);
    }
    Ok(set)
}

/// Softmax model over pooled, standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub n_classes: usize,
    pub feature_dim: usize,
    /// `n_classes × feature_dim`, row-major.
    pub weights: Vec<F>,
    pub bias: Vec<F>,
    pub feature_cfg: FeatureConfig,
    pub norm: NormStats,
}

/// Label and class probabilities of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<F> {
    pub label: u8,
    pub probabilities: Vec<F>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<F: Real> Model<F> {
    pub fn zeros(n_classes: usize, feature_cfg: FeatureConfig, norm: NormStats) -> Self {
        let d = feature_cfg.dim();
        Self {
            n_classes,
            feature_dim: d,
            weights: vec![F::zero(); n_classes * d],
            bias: vec![F::zero(); n_classes],
            feature_cfg,
            norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.feature_cfg.dim();
        if self.feature_dim != d
            || self.weights.len() != self.n_classes * d
            || self.bias.len() != self.n_classes
            || self.norm.mean.len() != d
            || self.norm.std.len() != d
        {
            return Err(Error::SizeMismatch(format!(
                "model parameters inconsistent with {} classes × {d} features",
                self.n_classes
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    fn logits_into(&self, features: &[F], out: &mut [F]) {
        for (c, z) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
            *z = w
                .iter()
                .zip(features)
                .fold(self.bias[c], |acc, (&wi, &fi)| acc + wi * fi);
        }
    }

    /// Class probabilities `softmax(W·f + b)` for already-standardized features.
    pub fn forward(&self, features: &[F]) -> Result<Vec<F>> {
        if features.len() != self.feature_dim {
            return Err(Error::SizeMismatch(format!(
                "{} features for a model of dimension {}",
                features.len(),
                self.feature_dim
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        let mut probs = vec![F::zero(); self.n_classes];
        self.logits_into(features, &mut probs);
        softmax_in_place(&mut probs);
        Ok(probs)
    }

    /// Pools, standardizes and classifies raw (unstandardized) pooled features.
    pub fn predict_features(&self, raw: &[F]) -> Result<Prediction<F>> {
        let mut f = raw.to_vec();
        self.norm.apply(&mut f);
        let probabilities = self.forward(&f)?;
        Ok(Prediction {
            label: argmax(&probabilities) as u8,
            probabilities,
        })
    }

    pub fn predict<T: Voxel>(&self, img: &TransformImage<T>) -> Result<Prediction<F>> {
        let raw = pool_features(img, &self.feature_cfg)?;
        self.predict_features(&raw)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            version: MODEL_VERSION,
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
            feature_cfg: self.feature_cfg,
            norm_stats: self.norm.clone(),
            weights: self.weights.iter().map(|v| v.to_f64().unwrap()).collect(),
            bias: self.bias.iter().map(|v| v.to_f64().unwrap()).collect(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                expected: MODEL_VERSION,
                found: version,
            });
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::json(path, e))?;
        let model = Self {
            n_classes: file.n_classes,
            feature_dim: file.feature_dim,
            weights: file.weights.into_iter().map(real).collect(),
            bias: file.bias.into_iter().map(real).collect(),
            feature_cfg: file.feature_cfg,
            norm: file.norm_stats,
        };
        model.validate()?;
        Ok(model)
    }
}

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    n_classes: usize,
    feature_dim: usize,
    feature_cfg: FeatureConfig,
    norm_stats: NormStats,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn softmax_in_place<F: Real>(z: &mut [F]) {
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in z.iter_mut() {
        *v = *v / sum;
    }
}

/// Anything that can label a transform image. The segmenter is generic over it.
pub trait ImageClassifier: Sync {
    type Scalar: Real;

    fn n_classes(&self) -> usize;

    fn classify<T: Voxel>(&self, img: &TransformImage<T>) -> Result<Prediction<Self::Scalar>>;
}

impl<F: Real> ImageClassifier for Model<F> {
    type Scalar = F;

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn classify<T: Voxel>(&self, img: &TransformImage<T>) -> Result<Prediction<F>> {
        self.predict(img)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub early_stop_window: usize,
    pub shuffle: bool,
    pub seed: u64,
    /// Steepness of the sigmoid learning-rate decay.
    pub lr_gamma: f64,
    /// Epoch at which the learning rate has halved; `None` means `epochs / 2`.
    pub lr_midpoint: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 1e-4,
            epochs: 120,
            batch: 4,
            early_stop_window: 5,
            shuffle: true,
            seed: 0,
            lr_gamma: 0.1,
            lr_midpoint: None,
        }
    }
}

impl TrainConfig {
    /// `lr_base · (1 − σ(γ·(epoch − midpoint)))`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let mid = self.lr_midpoint.unwrap_or(self.epochs as f64 / 2.0);
        let x = self.lr_gamma * (epoch as f64 - mid);
        self.lr_base * (1.0 - 1.0 / (1.0 + (-x).exp()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_base", self.lr_base),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
            ("lr_gamma", self.lr_gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("moment decay rates must be below 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if self.batch == 0 || self.early_stop_window == 0 {
            return Err(Error::Config(
                "batch size and early-stop window must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub config: TrainConfig,
    pub feature_cfg: FeatureConfig,
    /// What one unit of `config.epochs` counts.
    pub iteration_unit: String,
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 when no training happened).
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        out
    }

    /// Writes the per-epoch CSV to `path` and the metadata to `path` with a
    /// `.json` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))?;
        let meta = path.with_extension("json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&meta, e))?;
        fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))
    }
}

/// Gradient of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<F> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

/// Mean cross-entropy over `indices` of `set` (standardized features) plus
/// `l2·‖W‖²/2`, and its gradient.
pub fn loss_and_gradient<F: Real>(
    model: &Model<F>,
    set: &FeatureSet<F>,
    indices: &[usize],
    l2: f64,
) -> (F, Gradient<F>) {
    let d = model.feature_dim;
    let c = model.n_classes;
    let mut gw = vec![F::zero(); c * d];
    let mut gb = vec![F::zero(); c];
    let mut loss = F::zero();
    let mut p = vec![F::zero(); c];
    for &i in indices {
        let f = set.row(i);
        let y = set.labels[i] as usize;
        model.logits_into(f, &mut p);
        softmax_in_place(&mut p);
        loss = loss - p[y].max(F::min_positive_value()).ln();
        for k in 0..c {
            let delta = if k == y { p[k] - F::one() } else { p[k] };
            gb[k] = gb[k] + delta;
            let row = &mut gw[k * d..(k + 1) * d];
            for (g, &fi) in row.iter_mut().zip(f) {
                *g = *g + delta * fi;
            }
        }
    }
    let n = real::<F>(indices.len().max(1) as f64);
    let l2 = real::<F>(l2);
    let half = real::<F>(0.5);
    let mut penalty = F::zero();
    for (g, &w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
        penalty = penalty + w * w;
    }
    gb.iter_mut().for_each(|g| *g = *g / n);
    (loss / n + half * l2 * penalty, Gradient { weights: gw, bias: gb })
}

/// Mean loss (with penalty) and accuracy of `model` on all of `set`.
fn evaluate<F: Real>(model: &Model<F>, set: &FeatureSet<F>, l2: f64) -> (f64, f64) {
    if set.is_empty() {
        return (0.0, 0.0);
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let (loss, _) = loss_and_gradient(model, set, &all, l2);
    let mut p = vec![F::zero(); model.n_classes];
    let correct = set
        .rows()
        .zip(&set.labels)
        .filter(|(f, &y)| {
            model.logits_into(f, &mut p);
            argmax(&p) == y as usize
        })
        .count();
    (loss.to_f64().unwrap(), correct as f64 / set.len() as f64)
}

struct Adam<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Real> Adam<F> {
    fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [F]], grads: &[&[F]], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (real::<F>(cfg.beta1), real::<F>(cfg.beta2));
        let one = F::one();
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let lr = real::<F>(lr);
        let eps = real::<F>(cfg.epsilon);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = b1 * self.m[k] + (one - b1) * gi;
                self.v[k] = b2 * self.v[k] + (one - b2) * gi * gi;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
                k += 1;
            }
        }
    }
}

/// Fits normalization statistics on `train`, then trains a zero-initialized
/// model. Returns the best-validation snapshot and the history.
pub fn train<F: Real>(
    train: &FeatureSet<F>,
    val: &FeatureSet<F>,
    tcfg: &TrainConfig,
    fcfg: FeatureConfig,
) -> Result<(Model<F>, History)> {
    if train.dim != fcfg.dim() {
        return Err(Error::SizeMismatch(format!(
            "training features have dimension {}, config implies {}",
            train.dim,
            fcfg.dim()
        )));
    }
    let norm = if fcfg.standardize {
        NormStats::fit(train)
    } else {
        NormStats::identity(train.dim)
    };
    let model = Model::zeros(train.n_classes.max(val.n_classes), fcfg, norm);
    train_from(model, train, val, tcfg)
}

/// Continues training `init` (whose normalization statistics are kept) on raw
/// feature sets. With `epochs = 0` the model is returned unchanged.
pub fn train_from<F: Real>(
    init: Model<F>,
    train: &FeatureSet<F>,
    val: &FeatureSet<F>,
    tcfg: &TrainConfig,
) -> Result<(Model<F>, History)> {
    tcfg.validate()?;
    init.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if train.dim != init.feature_dim || val.dim != init.feature_dim {
        return Err(Error::SizeMismatch("feature dimension differs from the model".into()));
    }
    if tcfg.batch > train.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds {} training samples",
            tcfg.batch,
            train.len()
        )));
    }
    let counts = train.class_counts();
    if counts.len() != init.n_classes {
        return Err(Error::Config(format!(
            "training set has {} classes, model has {}",
            counts.len(),
            init.n_classes
        )));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!("class {c} has no training samples")));
    }

    let train_std = train.standardized(&init.norm);
    let val_std = val.standardized(&init.norm);
    let mut model = init;
    let mut history = History {
        config: tcfg.clone(),
        feature_cfg: model.feature_cfg,
        iteration_unit: "epoch".into(),
        records: Vec::new(),
        best_epoch: 0,
        best_val_acc: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best = model.clone();
    let mut since_best = 0;
    let mut adam = Adam::new(model.weights.len() + model.bias.len());
    let mut order: Vec<usize> = (0..train_std.len()).collect();

    for epoch in 0..tcfg.epochs {
        if tcfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        let lr = tcfg.learning_rate(epoch);
        for batch in order.chunks(tcfg.batch) {
            let (loss, grad) = loss_and_gradient(&model, &train_std, batch, tcfg.l2);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged in epoch {}",
                    epoch + 1
                )));
            }
            adam.step(
                &mut [&mut model.weights, &mut model.bias],
                &[&grad.weights, &grad.bias],
                lr,
                tcfg,
            );
        }
        let (train_loss, train_acc) = evaluate(&model, &train_std, tcfg.l2);
        let (val_loss, val_acc) = evaluate(&model, &val_std, tcfg.l2);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss diverged after epoch {}", epoch + 1)));
        }
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
        log::debug!(
            "epoch {:>3} lr {lr:.3e} train {train_loss:.4}/{train_acc:.4} val {val_loss:.4}/{val_acc:.4}",
            epoch + 1
        );
        if val_acc > history.best_val_acc {
            history.best_val_acc = val_acc;
            history.best_epoch = epoch + 1;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.early_stop_window {
                history.stopped_early = true;
                break;
            }
        }
    }
    if history.records.is_empty() {
        history.best_val_acc = 0.0;
        best = model;
    }
    Ok((best, history))
}
