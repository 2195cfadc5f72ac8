//! Synthetic datasets, CSV ingestion and seeded mini-batching.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::Batch;

const TRAIN_FRACTION: f64 = 0.8;
const BLOB_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major, `n_features` columns.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub n_features: usize,
    pub n_classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(Error::Structural(format!(
                "{} feature values do not form {} rows of {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        let train = (0..labels.len()).collect();
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
            train,
            test: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Reassign rows to a seeded random train/test split with
    /// `round(train_fraction * n)` training rows.
    pub fn split(mut self, seed: u64, train_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Domain(format!(
                "train fraction must lie in [0, 1], got {train_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * self.len() as f64).round() as usize;
        self.test = idx.split_off(n_train);
        self.train = idx;
        Ok(self)
    }

    fn gather(&self, rows: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(rows.len() * self.n_features);
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, labels, self.n_features)
    }

    pub fn train_batch(&self) -> Result<Batch> {
        self.gather(&self.train)
    }

    pub fn test_batch(&self) -> Result<Batch> {
        self.gather(&self.test)
    }

    /// Standardize every column with the mean and (population) standard
    /// deviation of the training rows. Constant columns are only centered.
    pub fn standardize(&mut self) {
        let d = self.n_features;
        let n = self.train.len() as f64;
        if self.train.is_empty() {
            return;
        }
        for j in 0..d {
            let mean = self.train.iter().map(|&i| self.features[i * d + j]).sum::<f64>() / n;
            let var = self
                .train
                .iter()
                .map(|&i| (self.features[i * d + j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                let x = &mut self.features[i * d + j];
                *x = (*x - mean) / sd;
            }
        }
    }
}

/// Gaussian clusters around `n_classes` centers evenly spaced on a circle
/// of radius 3, with an 80/20 train/test split.
pub fn gen_blobs(seed: u64, n_per_class: usize, n_classes: usize, noise_sigma: f64) -> Result<Dataset> {
    if n_per_class < 2 {
        return Err(Error::Domain(format!("n_per_class must be >= 2, got {n_per_class}")));
    }
    if n_classes < 2 || !(noise_sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "need >= 2 classes and noise >= 0, got {n_classes} and {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(2 * n_per_class * n_classes);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for c in 0..n_classes {
        let angle = 2.0 * PI * c as f64 / n_classes as f64;
        let (cx, cy) = (BLOB_RADIUS * angle.cos(), BLOB_RADIUS * angle.sin());
        for _ in 0..n_per_class {
            let (ex, ey): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            features.push(cx + noise_sigma * ex);
            features.push(cy + noise_sigma * ey);
            labels.push(c);
        }
    }
    Dataset::new(features, labels, 2, n_classes)?.split(seed, TRAIN_FRACTION)
}

/// Two interleaved Archimedean spirals: arm `c` at sample `i` has radius
/// `0.25 + 4.75 s` and angle `2 pi turns s + c pi`, `s = i / (n - 1)`.
pub fn gen_spirals(seed: u64, n_per_class: usize, turns: f64, noise_sigma: f64) -> Result<Dataset> {
    if n_per_class < 2 {
        return Err(Error::Domain(format!("n_per_class must be >= 2, got {n_per_class}")));
    }
    if !(turns > 0.0) || !(noise_sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "need turns > 0 and noise >= 0, got {turns} and {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for c in 0..2 {
        for i in 0..n_per_class {
            let s = i as f64 / (n_per_class - 1) as f64;
            let r = 0.25 + 4.75 * s;
            let phi = 2.0 * PI * turns * s + c as f64 * PI;
            let (ex, ey): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            features.push(r * phi.cos() + noise_sigma * ex);
            features.push(r * phi.sin() + noise_sigma * ey);
            labels.push(c);
        }
    }
    Dataset::new(features, labels, 2, 2)?.split(seed, TRAIN_FRACTION)
}

/// Read a CSV file with a header row, numeric feature columns and an
/// integer label in the last column. All rows go to the training split.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let n_cols = headers.len();
    if n_cols < 2 {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("header has {n_cols} column(s); need features plus a label"),
        });
    }
    let n_features = n_cols - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        if record.len() != n_cols {
            return Err(bad(format!(
                "expected {n_cols} fields ({n_features} features and a label), found {}",
                record.len()
            )));
        }
        for (j, field) in record.iter().take(n_features).enumerate() {
            let x: f64 = field
                .parse()
                .map_err(|_| bad(format!("column {}: {field:?} is not a number", j + 1)))?;
            features.push(x);
        }
        let label_field = &record[n_features];
        let label: usize = label_field
            .parse()
            .map_err(|_| bad(format!("label {label_field:?} is not a non-negative integer")))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, labels, n_features, n_classes)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.into(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Seeded Fisher-Yates shuffle of the training rows, keyed by
/// `(seed, epoch)`, cut into batches of `batch_size`. A final batch with
/// fewer than two rows is dropped.
pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::Domain(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut order = dataset.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| dataset.gather(c))
        .collect()
}

/// The first batch of the epoch-0 stream. Sharpness is always measured on
/// this batch so values are comparable across epochs and runs.
pub fn measurement_batch(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Batch> {
    batches(dataset, batch_size, seed, 0)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Domain("training split yields no batch".into()))
}
