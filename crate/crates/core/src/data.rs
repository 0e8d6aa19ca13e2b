//! Synthetic long-tailed datasets and two-view mini-batches.
//!
//! Class `c` of `C` receives `round(n_max * alpha^(-c/(C-1)))` samples, so the
//! head/tail ratio is the imbalance factor `alpha`. Each class is split 3:1:1
//! into train/val/test with `test = val = floor(N_c / 5)` and the remainder in
//! train.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Smallest class size that still leaves one sample in each of the three splits.
pub const MIN_CLASS_SIZE: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// Isotropic Gaussian blobs whose centers sit on a sphere of radius `separation`.
    #[default]
    GaussianBlobs,
    /// Noisy rings in the first two input dimensions, ring `c` at radius
    /// `separation * (c + 1)`.
    ConcentricRings,
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format {
                what: "split tag",
                reason: format!("unknown split `{other}`"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub input_dim: usize,
    pub n_max: usize,
    pub alpha: f64,
    #[serde(default)]
    pub geometry: Geometry,
    /// Blob-center radius, or ring spacing.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Per-coordinate noise standard deviation around the class structure.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Set by the caller; experiment files carry a single top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

fn default_separation() -> f64 {
    3.0
}

fn default_spread() -> f64 {
    1.0
}

impl SynthConfig {
    pub fn new(classes: usize, input_dim: usize, n_max: usize, alpha: f64, seed: u64) -> Self {
        Self {
            classes,
            input_dim,
            n_max,
            alpha,
            geometry: Geometry::default(),
            separation: default_separation(),
            spread: default_spread(),
            seed,
        }
    }

    /// Per-class sample totals (all splits), validated against the config.
    pub fn class_totals(&self) -> Result<Vec<usize>> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.geometry == Geometry::ConcentricRings && self.input_dim < 2 {
            return Err(Error::config(
                "input_dim",
                "concentric-rings needs at least 2 dimensions",
            ));
        }
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(Error::config(
                "alpha",
                format!("imbalance factor must be >= 1, got {}", self.alpha),
            ));
        }
        if self.n_max < self.classes {
            return Err(Error::config(
                "n_max",
                "must be at least the number of classes",
            ));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::config(
                "separation",
                "must be finite and non-negative",
            ));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::config("spread", "must be finite and non-negative"));
        }
        let last = (self.classes - 1) as f64;
        let totals: Vec<usize> = (0..self.classes)
            .map(|c| (self.n_max as f64 * self.alpha.powf(-(c as f64) / last)).round() as usize)
            .collect();
        if let Some((c, &n)) = totals.iter().enumerate().find(|(_, &n)| n < MIN_CLASS_SIZE) {
            return Err(Error::config(
                "alpha",
                format!("class {c} would get {n} samples, fewer than {MIN_CLASS_SIZE} needed for a 3:1:1 split"),
            ));
        }
        Ok(totals)
    }
}

/// `(train, val, test)` sizes for a class of `n` samples.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let fifth = n / 5;
    (n - 2 * fifth, fifth, fifth)
}

/// Labeled feature matrix with a split tag per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<F> {
    features: Array2<F>,
    labels: Vec<usize>,
    splits: Vec<Split>,
    classes: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn from_parts(
        features: Array2<F>,
        labels: Vec<usize>,
        splits: Vec<Split>,
        classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || splits.len() != n {
            return Err(Error::Shape {
                context: "dataset rows",
                expected: vec![n, n],
                actual: vec![labels.len(), splits.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(
                "dataset contains non-finite features".into(),
            ));
        }
        let ds = Self {
            features,
            labels,
            splits,
            classes,
        };
        if let Some(c) = ds.class_counts().iter().position(|&n| n == 0) {
            return Err(Error::Invalid(format!("class {c} has no training samples")));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Array2<F> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Training-split sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        self.counts_in(Some(Split::Train))
    }

    /// Sample count per class over every split.
    pub fn class_totals(&self) -> Vec<usize> {
        self.counts_in(None)
    }

    pub fn counts_in(&self, split: Option<Split>) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for (&l, &s) in self.labels.iter().zip(&self.splits) {
            if split.is_none_or(|want| want == s) {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Feature rows and labels of one split, in dataset order.
    pub fn select(&self, split: Split) -> (Array2<F>, Vec<usize>) {
        let idx = self.indices(split);
        let x = self.features.select(Axis(0), &idx);
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let k = self.input_dim();
        let mut header: Vec<String> = (0..k).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        header.push("split".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut line = String::new();
            for j in 0..k {
                line.push_str(&format_f64(self.features[[i, j]].as_f64()));
                line.push(',');
            }
            line.push_str(&self.labels[i].to_string());
            line.push(',');
            line.push_str(self.splits[i].as_str());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parses the CSV produced by [`Dataset::write_csv`]. The class count is
    /// `classes` when given, otherwise one more than the largest label.
    pub fn read_csv<R: BufRead>(input: R, classes: Option<usize>) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Format {
            what: "dataset csv",
            reason: "empty file".into(),
        })??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        let k = cols
            .len()
            .checked_sub(2)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Format {
                what: "dataset csv",
                reason: "header needs at least one feature column plus label,split".into(),
            })?;
        let expected: Vec<String> = (0..k)
            .map(|j| format!("f{j}"))
            .chain(["label".into(), "split".into()])
            .collect();
        if cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Format {
                what: "dataset csv",
                reason: format!("unexpected header `{header}`"),
            });
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            let bad = |reason: String| Error::Format {
                what: "dataset csv",
                reason: format!("line {}: {reason}", lineno + 2),
            };
            if fields.len() != k + 2 {
                return Err(bad(format!(
                    "expected {} fields, got {}",
                    k + 2,
                    fields.len()
                )));
            }
            for f in &fields[..k] {
                let v: f64 = f.parse().map_err(|_| bad(format!("bad float `{f}`")))?;
                values.push(F::of(v));
            }
            labels.push(
                fields[k]
                    .parse::<usize>()
                    .map_err(|_| bad(format!("bad label `{}`", fields[k])))?,
            );
            splits.push(fields[k + 1].parse::<Split>()?);
        }
        let n = labels.len();
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let features = Array2::from_shape_vec((n, k), values).map_err(|e| Error::Format {
            what: "dataset csv",
            reason: e.to_string(),
        })?;
        Self::from_parts(features, labels, splits, classes)
    }
}

/// Round-trip float formatting with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Builds the dataset described by `config`; identical configs give
/// bitwise-identical datasets.
pub fn generate<F: Scalar>(config: &SynthConfig) -> Result<Dataset<F>> {
    let totals = config.class_totals()?;
    let k = config.input_dim;
    let centers = blob_centers(config);
    let n: usize = totals.iter().sum();
    let mut values = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for (c, &n_c) in totals.iter().enumerate() {
        let mut rng = rng::stream(config.seed, Purpose::Samples, c as u64);
        for _ in 0..n_c {
            match config.geometry {
                Geometry::GaussianBlobs => {
                    for &center in &centers[c][..k] {
                        let z: f64 = rng.sample(StandardNormal);
                        values.push(F::of(center + config.spread * z));
                    }
                }
                Geometry::ConcentricRings => {
                    let radius = config.separation * (c + 1) as f64;
                    let theta = rng.random::<f64>() * 2.0 * PI;
                    let dr: f64 = rng.sample(StandardNormal);
                    let r = radius + config.spread * dr;
                    values.push(F::of(r * theta.cos()));
                    values.push(F::of(r * theta.sin()));
                    for _ in 2..k {
                        let z: f64 = rng.sample(StandardNormal);
                        values.push(F::of(config.spread * z));
                    }
                }
            }
            labels.push(c);
        }
        let (_, n_val, n_test) = split_sizes(n_c);
        let mut tags: Vec<Split> = std::iter::repeat_n(Split::Test, n_test)
            .chain(std::iter::repeat_n(Split::Val, n_val))
            .chain(std::iter::repeat_n(Split::Train, n_c - n_val - n_test))
            .collect();
        tags.shuffle(&mut rng::stream(config.seed, Purpose::Split, c as u64));
        splits.extend(tags);
    }
    let features = Array2::from_shape_vec((n, k), values).expect("row-major buffer matches shape");
    Dataset::from_parts(features, labels, splits, config.classes)
}

fn blob_centers(config: &SynthConfig) -> Vec<Vec<f64>> {
    let k = config.input_dim;
    let r = config.separation;
    let c_count = config.classes;
    if config.geometry != Geometry::GaussianBlobs {
        return vec![vec![0.0; k]; c_count];
    }
    match k {
        1 => (0..c_count).map(|c| vec![r * c as f64]).collect(),
        2 => {
            // evenly spaced on the circle, with a seeded rotation
            let phase = rng::stream(config.seed, Purpose::Geometry, 0).random::<f64>() * 2.0 * PI;
            (0..c_count)
                .map(|c| {
                    let a = phase + 2.0 * PI * c as f64 / c_count as f64;
                    vec![r * a.cos(), r * a.sin()]
                })
                .collect()
        }
        _ => (0..c_count)
            .map(|c| {
                let mut g = rng::stream(config.seed, Purpose::Geometry, c as u64);
                let dir: Vec<f64> = (0..k).map(|_| g.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                dir.iter().map(|x| r * x / norm).collect()
            })
            .collect(),
    }
}

/// Jitter strengths for the two views, as fractions of the pooled training
/// feature standard deviation. The second view is also rotated in the plane
/// (for 2-D inputs) by an angle drawn from `N(0, sigma2)` radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            sigma1: 0.05,
            sigma2: 0.10,
        }
    }
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation {
        sigma1: 0.0,
        sigma2: 0.0,
    };
}

/// Two augmented views of the same `B` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedBatch<F> {
    pub view1: Array2<F>,
    pub view2: Array2<F>,
    pub labels: Vec<usize>,
    /// Dataset row of each sample.
    pub indices: Vec<usize>,
}

impl<F: Scalar> AugmentedBatch<F> {
    /// Batch whose views are both the given rows, unaugmented.
    pub fn identity(x: Array2<F>, labels: Vec<usize>) -> Self {
        let indices = (0..labels.len()).collect();
        Self {
            view1: x.clone(),
            view2: x,
            labels,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Iterations per epoch with drop-last batching.
pub fn iterations_per_epoch(train_size: usize, batch_size: usize) -> usize {
    train_size / batch_size
}

/// Draws the mini-batches of one epoch: a Fisher-Yates shuffle of the training
/// split keyed by `(seed, epoch)`, consumed `B` samples at a time.
pub struct EpochSampler<'a, F> {
    dataset: &'a Dataset<F>,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    drop_last: bool,
    augmentation: Augmentation,
    scale: f64,
    center: Array1<f64>,
    noise: ChaCha8Rng,
}

impl<'a, F: Scalar> EpochSampler<'a, F> {
    pub fn new(
        dataset: &'a Dataset<F>,
        batch_size: usize,
        augmentation: Augmentation,
        seed: u64,
        epoch: u64,
        drop_last: bool,
    ) -> Result<Self> {
        let mut order = dataset.indices(Split::Train);
        if batch_size == 0 || batch_size > order.len() {
            return Err(Error::config(
                "batch_size",
                format!("must be in 1..={} (training split size)", order.len()),
            ));
        }
        order.shuffle(&mut rng::stream(seed, Purpose::Shuffle, epoch));
        let (scale, center) = train_moments(dataset);
        Ok(Self {
            dataset,
            order,
            cursor: 0,
            batch_size,
            drop_last,
            augmentation,
            scale,
            center,
            noise: rng::stream(seed, Purpose::Augment, epoch),
        })
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    /// Next batch of the epoch. Returns `None` once the pool is empty, or when
    /// fewer than `B` samples remain and drop-last is set.
    pub fn next_batch(&mut self) -> Result<Option<AugmentedBatch<F>>> {
        let remaining = self.remaining();
        if remaining == 0 {
            return Ok(None);
        }
        if remaining < self.batch_size {
            if self.drop_last {
                return Ok(None);
            }
            return Err(Error::EpochExhausted {
                requested: self.batch_size,
                remaining,
            });
        }
        let indices = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        Ok(Some(self.augment(indices)))
    }

    fn augment(&mut self, indices: Vec<usize>) -> AugmentedBatch<F> {
        let k = self.dataset.input_dim();
        let b = indices.len();
        let x = self.dataset.features();
        let s1 = self.augmentation.sigma1 * self.scale;
        let s2 = self.augmentation.sigma2 * self.scale;
        let mut view1 = Array2::zeros((b, k));
        let mut view2 = Array2::zeros((b, k));
        for (r, &i) in indices.iter().enumerate() {
            for j in 0..k {
                let z: f64 = self.noise.sample(StandardNormal);
                view1[[r, j]] = x[[i, j]] + F::of(s1 * z);
            }
            let mut strong: Vec<f64> = Vec::with_capacity(k);
            for j in 0..k {
                let z: f64 = self.noise.sample(StandardNormal);
                strong.push(x[[i, j]].as_f64() + s2 * z);
            }
            if k == 2 {
                let z: f64 = self.noise.sample(StandardNormal);
                let angle = self.augmentation.sigma2 * z;
                if angle != 0.0 {
                    let (sin, cos) = angle.sin_cos();
                    let dx = strong[0] - self.center[0];
                    let dy = strong[1] - self.center[1];
                    strong[0] = self.center[0] + cos * dx - sin * dy;
                    strong[1] = self.center[1] + sin * dx + cos * dy;
                }
            }
            for (j, v) in strong.into_iter().enumerate() {
                view2[[r, j]] = F::of(v);
            }
        }
        let labels = indices.iter().map(|&i| self.dataset.labels()[i]).collect();
        AugmentedBatch {
            view1,
            view2,
            labels,
            indices,
        }
    }
}

/// Pooled standard deviation and per-dimension mean of the training features.
fn train_moments<F: Scalar>(dataset: &Dataset<F>) -> (f64, Array1<f64>) {
    let idx = dataset.indices(Split::Train);
    let k = dataset.input_dim();
    let x = dataset.features();
    let mut center = Array1::zeros(k);
    for &i in &idx {
        for j in 0..k {
            center[j] += x[[i, j]].as_f64();
        }
    }
    center /= idx.len() as f64;
    let mut ss = 0.0;
    for &i in &idx {
        for j in 0..k {
            let d = x[[i, j]].as_f64() - center[j];
            ss += d * d;
        }
    }
    let std = (ss / (idx.len() * k) as f64).sqrt();
    (std, center)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_totals_follow_geometric_decay() {
        let cfg = SynthConfig::new(4, 2, 1000, 50.0, 0);
        assert_eq!(cfg.class_totals().unwrap(), vec![1000, 271, 74, 20]);
        let cfg = SynthConfig::new(2, 2, 100, 1.0, 0);
        assert_eq!(cfg.class_totals().unwrap(), vec![100, 100]);
    }

    #[test]
    fn rejects_alpha_below_one_and_tiny_classes() {
        let err = SynthConfig::new(3, 2, 100, 0.5, 0)
            .class_totals()
            .unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "alpha"),
            "{err}"
        );
        let err = SynthConfig::new(3, 2, 100, 40.0, 0)
            .class_totals()
            .unwrap_err();
        assert!(err.to_string().contains("fewer than 5"), "{err}");
    }

    #[test]
    fn split_sizes_are_three_one_one() {
        assert_eq!(split_sizes(20), (12, 4, 4));
        assert_eq!(split_sizes(74), (46, 14, 14));
        assert_eq!(split_sizes(5), (3, 1, 1));
        assert_eq!(split_sizes(9), (7, 1, 1));
    }

    #[test]
    fn generate_is_deterministic() {
        let cfg = SynthConfig::new(5, 2, 1500, 50.0, 7);
        let a: Dataset<f64> = generate(&cfg).unwrap();
        let b: Dataset<f64> = generate(&cfg).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.splits(), b.splits());
        assert!(a
            .features()
            .iter()
            .zip(b.features())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rings_need_two_dims() {
        let mut cfg = SynthConfig::new(3, 1, 100, 2.0, 0);
        cfg.geometry = Geometry::ConcentricRings;
        assert!(generate::<f64>(&cfg).is_err());
        cfg.input_dim = 3;
        let ds: Dataset<f64> = generate(&cfg).unwrap();
        assert_eq!(ds.input_dim(), 3);
    }

    #[test]
    fn zero_noise_views_equal_raw_features() {
        let cfg = SynthConfig::new(3, 2, 200, 4.0, 1);
        let ds: Dataset<f64> = generate(&cfg).unwrap();
        let mut s = EpochSampler::new(&ds, 16, Augmentation::NONE, 1, 0, true).unwrap();
        let b = s.next_batch().unwrap().unwrap();
        for (r, &i) in b.indices.iter().enumerate() {
            assert_eq!(b.view1.row(r), ds.features().row(i));
            assert_eq!(b.view2.row(r), ds.features().row(i));
        }
    }

    #[test]
    fn full_batch_covers_train_split_once() {
        let cfg = SynthConfig::new(3, 2, 200, 4.0, 1);
        let ds: Dataset<f64> = generate(&cfg).unwrap();
        let n = ds.indices(Split::Train).len();
        let mut s = EpochSampler::new(&ds, n, Augmentation::default(), 1, 3, false).unwrap();
        let b = s.next_batch().unwrap().unwrap();
        let mut seen = b.indices.clone();
        seen.sort_unstable();
        assert_eq!(seen, ds.indices(Split::Train));
        assert!(s.next_batch().unwrap().is_none());
    }

    #[test]
    fn short_tail_batch_errors_without_drop_last() {
        let cfg = SynthConfig::new(2, 2, 100, 1.0, 1);
        let ds: Dataset<f64> = generate(&cfg).unwrap();
        // 120 training samples, batches of 50
        let mut s = EpochSampler::new(&ds, 50, Augmentation::NONE, 0, 0, false).unwrap();
        assert!(s.next_batch().unwrap().is_some());
        assert!(s.next_batch().unwrap().is_some());
        assert!(matches!(
            s.next_batch(),
            Err(Error::EpochExhausted {
                requested: 50,
                remaining: 20
            })
        ));
        let mut s = EpochSampler::new(&ds, 50, Augmentation::NONE, 0, 0, true).unwrap();
        let mut t = 0;
        while s.next_batch().unwrap().is_some() {
            t += 1;
        }
        assert_eq!(t, iterations_per_epoch(120, 50));
    }

    #[test]
    fn views_share_labels_and_differ_under_noise() {
        let cfg = SynthConfig::new(3, 2, 200, 4.0, 1);
        let ds: Dataset<f64> = generate(&cfg).unwrap();
        let mut s = EpochSampler::new(&ds, 8, Augmentation::default(), 1, 0, true).unwrap();
        let b = s.next_batch().unwrap().unwrap();
        let expect: Vec<usize> = b.indices.iter().map(|&i| ds.labels()[i]).collect();
        assert_eq!(b.labels, expect);
        assert_ne!(b.view1, b.view2);
    }
}
