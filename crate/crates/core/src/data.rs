//! Synthetic multi-view classification data, minibatch sampling, and the
//! data-fraction protocol.
//!
//! Each class `y` has, for every view `v`, a mean `μ_{y,v}`: a seeded random
//! unit direction in `R^dims_per_view` scaled by the view's separation `s_v`.
//! A sample is `x_v = μ_{y,v} + σ·ε` for every view, with `y` uniform. Views
//! with `s_v = 0` carry no label signal. Because the class-conditional
//! densities are isotropic Gaussians with equal priors, the Bayes rule on any
//! subset of views is the nearest-mean classifier on that subset.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiViewSpec {
    pub n_views: usize,
    pub dims_per_view: usize,
    pub num_classes: usize,
    /// Class-mean separation `s_v`, one entry per view.
    pub separation: Vec<f64>,
    /// Noise standard deviation σ.
    pub noise: f64,
    pub train_size: usize,
    pub val_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl MultiViewSpec {
    pub fn input_dim(&self) -> usize {
        self.n_views * self.dims_per_view
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::config("dataset.n_views", "must be at least 1"));
        }
        if self.dims_per_view == 0 {
            return Err(Error::config("dataset.dims_per_view", "must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("dataset.num_classes", "must be at least 2"));
        }
        if self.separation.len() != self.n_views {
            return Err(Error::config(
                "dataset.separation",
                format!("expected {} entries, found {}", self.n_views, self.separation.len()),
            ));
        }
        if self.separation.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::config("dataset.separation", "entries must be non-negative"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::config("dataset.noise", "must be positive"));
        }
        if self.train_size == 0 || self.val_size == 0 {
            return Err(Error::config("dataset.train_size", "train and val sizes must be positive"));
        }
        Ok(())
    }

    /// Class means, `means[y]` is the concatenation over views.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = seeding::rng(seeding::derive_seed(self.seed, Stream::DataGen, 0));
        let d = self.dims_per_view;
        let mut means = vec![Vec::with_capacity(self.input_dim()); self.num_classes];
        for &s in &self.separation {
            for mean in means.iter_mut() {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                mean.extend(dir.iter().map(|v| s * v / norm));
            }
        }
        means
    }

    /// Column indices covered by `views`.
    pub fn view_columns(&self, views: &[usize]) -> Vec<usize> {
        let d = self.dims_per_view;
        views.iter().flat_map(|&v| v * d..(v + 1) * d).collect()
    }

    /// Input mask exposing exactly the listed views.
    pub fn view_mask(&self, views: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.input_dim()];
        for c in self.view_columns(views) {
            mask[c] = true;
        }
        mask
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// Writes a one-line text header followed by row-major little-endian
    /// `f64` features and `u32` labels:
    ///
    /// ```text
    /// codistillery-dataset v1 split=<train|val> rows=<N> cols=<D> classes=<C>\n
    /// ```
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let split = match self.split {
            Split::Train => "train",
            Split::Val => "val",
        };
        writeln!(
            w,
            "codistillery-dataset v1 split={split} rows={} cols={} classes={}",
            self.len(),
            self.features.cols(),
            self.num_classes
        )?;
        for v in self.features.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &y in &self.labels {
            w.write_all(&(y as u32).to_le_bytes())?;
        }
        Ok(())
    }
}

fn draw(spec: &MultiViewSpec, means: &[Vec<f64>], n: usize, stream_index: u64, split: Split) -> Result<Dataset> {
    let mut rng = seeding::rng(seeding::derive_seed(spec.seed, Stream::DataGen, stream_index));
    let dim = spec.input_dim();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..spec.num_classes);
        labels.push(y);
        for &m in &means[y] {
            let eps: f64 = rng.sample(StandardNormal);
            features.push(m + spec.noise * eps);
        }
    }
    Ok(Dataset {
        features: Tensor::new(vec![n, dim], features)?,
        labels,
        split,
        num_classes: spec.num_classes,
    })
}

/// Generates the train and validation sets.
pub fn generate_multiview(spec: &MultiViewSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let means = spec.class_means();
    let train = draw(spec, &means, spec.train_size, 1, Split::Train)?;
    let val = draw(spec, &means, spec.val_size, 2, Split::Val)?;
    Ok((train, val))
}

/// Nearest class mean over the given columns, ties to the lowest class.
pub fn nearest_mean(x: &[f64], means: &[Vec<f64>], cols: &[usize]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, m) in means.iter().enumerate() {
        let mut d = 0.0;
        for &j in cols {
            let t = x[j] - m[j];
            d += t * t;
        }
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Monte-Carlo sample count used by [`bayes_accuracy`] for `C > 2`.
pub const BAYES_MC_SAMPLES: usize = 200_000;

/// Accuracy of the Bayes-optimal classifier restricted to `views`.
///
/// Exact for two classes (`Φ(‖Δμ‖ / 2σ)`); seeded Monte Carlo otherwise.
/// A subset without signal returns exactly `1/C`.
pub fn bayes_accuracy(spec: &MultiViewSpec, views: &[usize]) -> Result<f64> {
    spec.validate()?;
    if views.is_empty() {
        return Err(Error::contract("bayes_accuracy needs at least one view"));
    }
    if let Some(&v) = views.iter().find(|&&v| v >= spec.n_views) {
        return Err(Error::contract(format!("view {v} out of range")));
    }
    if views.iter().all(|&v| spec.separation[v] == 0.0) {
        return Ok(1.0 / spec.num_classes as f64);
    }
    let means = spec.class_means();
    let cols = spec.view_columns(views);
    if spec.num_classes == 2 {
        let dist = cols
            .iter()
            .map(|&j| (means[0][j] - means[1][j]).powi(2))
            .sum::<f64>()
            .sqrt();
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        return Ok(std.cdf(dist / (2.0 * spec.noise)));
    }
    Ok(bayes_accuracy_mc(spec, &means, views, BAYES_MC_SAMPLES))
}

/// Seeded Monte-Carlo estimate. Full feature vectors are drawn and then
/// restricted, so different view subsets share random numbers.
pub fn bayes_accuracy_mc(spec: &MultiViewSpec, means: &[Vec<f64>], views: &[usize], samples: usize) -> f64 {
    let mut rng = seeding::rng(seeding::derive_seed(spec.seed, Stream::BayesMonteCarlo, 0));
    let cols = spec.view_columns(views);
    let dim = spec.input_dim();
    let mut x = vec![0.0; dim];
    let mut correct = 0usize;
    for _ in 0..samples {
        let y = rng.random_range(0..spec.num_classes);
        for (xi, &m) in x.iter_mut().zip(&means[y]) {
            let eps: f64 = rng.sample(StandardNormal);
            *xi = m + spec.noise * eps;
        }
        if nearest_mean(&x, means, &cols) == y {
            correct += 1;
        }
    }
    correct as f64 / samples as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Each group shuffles with its own seed.
    #[default]
    Independent,
    /// All groups share one index stream.
    Coordinated,
}

/// Epoch-wise shuffled index stream with drop-last batching.
#[derive(Clone, Debug)]
pub struct SamplerState {
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    cursor: usize,
}

impl SamplerState {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            seed,
            epoch: 0,
            perm: (0..n).collect(),
            cursor: 0,
        };
        s.shuffle();
        s
    }

    /// Sampler for group `group` of a run seeded with `seed`.
    pub fn for_group(n: usize, seed: u64, group: u64, mode: SamplingMode) -> Self {
        let index = match mode {
            SamplingMode::Coordinated => 0,
            SamplingMode::Independent => group + 1,
        };
        Self::new(n, seeding::derive_seed(seed, Stream::Sampler, index))
    }

    fn shuffle(&mut self) {
        self.perm.sort_unstable();
        let mut rng = seeding::rng(seeding::mix64(self.seed ^ seeding::mix64(self.epoch)));
        self.perm.shuffle(&mut rng);
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Next `batch` indices, reshuffling at epoch boundaries; a ragged tail
    /// is dropped.
    pub fn next_indices(&mut self, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 || batch > self.perm.len() {
            return Err(Error::config(
                "strategy.per_device_batch",
                format!("batch {batch} does not fit {} training samples", self.perm.len()),
            ));
        }
        if self.cursor + batch > self.perm.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let out = self.perm[self.cursor..self.cursor + batch].to_vec();
        self.cursor += batch;
        Ok(out)
    }
}

/// A drawn minibatch.
#[derive(Clone, Debug)]
pub struct Minibatch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub indices: Vec<usize>,
}

pub fn next_minibatch(state: &mut SamplerState, data: &Dataset, batch: usize) -> Result<Minibatch> {
    let indices = state.next_indices(batch)?;
    let (x, y) = data.select(&indices)?;
    Ok(Minibatch { x, y, indices })
}

/// Keeps a seeded `⌊N/k⌋`-sample subset; returns it with the epoch
/// multiplier `k` that holds the total number of updates fixed.
pub fn subsample_fraction(train: &Dataset, k: u64, seed: u64) -> Result<(Dataset, u64)> {
    let n = train.len();
    if k == 0 || k as usize > n {
        return Err(Error::config(
            "dataset.subsample",
            format!("fraction 1/{k} is invalid for {n} samples"),
        ));
    }
    if k == 1 {
        return Ok((train.clone(), 1));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeding::rng(seeding::derive_seed(seed, Stream::Subsample, k));
    idx.shuffle(&mut rng);
    idx.truncate(n / k as usize);
    idx.sort_unstable();
    let (features, labels) = train.select(&idx)?;
    Ok((
        Dataset {
            features,
            labels,
            split: train.split,
            num_classes: train.num_classes,
        },
        k,
    ))
}

/// Top-1 accuracy of `logits` against `labels` (ties to the lowest class).
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let pred = logits.argmax_rows();
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}
