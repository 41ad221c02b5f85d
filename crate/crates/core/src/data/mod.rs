//! Labeled datasets: IDX loading, synthetic generation, and splits.

mod idx;

pub use idx::{load_idx, parse_idx, write_idx};

use crate::error::{Error, Result};
use crate::tensor::{streams, RngStream, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vector>,
    labels: Vec<usize>,
    classes: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vector>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::dim("dataset labels", inputs.len(), labels.len()));
        }
        let dim = inputs.first().map_or(0, |v| v.len());
        if let Some(bad) = inputs.iter().position(|v| v.len() != dim) {
            return Err(Error::dim("dataset input", dim, inputs[bad].len()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Domain(format!("label {y} not below class count {classes}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite input value".into()));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> (&Vector, usize) {
        (&self.inputs[i], self.labels[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vector, usize)> + '_ {
        self.inputs.iter().zip(self.labels.iter().copied())
    }

    /// New dataset holding the given rows in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            dim: self.dim,
        }
    }

    /// Concatenation of two datasets with the same shape.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if !self.is_empty() && !other.is_empty() && self.dim != other.dim {
            return Err(Error::dim("dataset concat", self.dim, other.dim));
        }
        let mut inputs = self.inputs.clone();
        inputs.extend(other.inputs.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend(&other.labels);
        Dataset::new(inputs, labels, self.classes.max(other.classes))
    }

    /// Largest input norm `max ‖x‖₂`.
    pub fn max_input_norm(&self) -> f64 {
        self.inputs.iter().map(Vector::norm).fold(0.0, f64::max)
    }
}

/// Isotropic Gaussian blobs: class `c` is centered at `separation · e_{c mod d}`
/// with unit variance per coordinate.
///
/// Coordinates are clipped to `[-4, separation + 4]` and that fixed range is
/// mapped onto `[0, 1]`, so independently generated sets share one scale.
pub fn synth_gaussians(k: usize, d: usize, n_per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {k}")));
    }
    if d == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Domain(format!("invalid separation {separation}")));
    }
    let lo = -4.0;
    let hi = separation + 4.0;
    let mut rng = RngStream::new(seed, streams::DATA);
    let mut inputs = Vec::with_capacity(k * n_per_class);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for _ in 0..n_per_class {
        for c in 0..k {
            let x = (0..d)
                .map(|j| {
                    let center = if j == c % d { separation } else { 0.0 };
                    let v = (center + rng.standard_normal()).clamp(lo, hi);
                    (v - lo) / (hi - lo)
                })
                .collect();
            inputs.push(Vector::new(x));
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, k)
}

/// Deterministic shuffled split into `(train, validation)` with `holdout`
/// validation examples.
pub fn split(ds: &Dataset, holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if holdout >= ds.len() && !(holdout == 0 && ds.is_empty()) {
        return Err(Error::Domain(format!(
            "holdout {holdout} must be smaller than dataset size {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    RngStream::new(seed, streams::SPLIT).shuffle(&mut order);
    let (val, train) = order.split_at(holdout);
    Ok((ds.subset(train), ds.subset(val)))
}
