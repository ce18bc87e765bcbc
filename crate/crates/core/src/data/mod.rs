//! Datasets and the marketplace split.
//!
//! A [`Dataset`] is a dense row-major feature matrix with integer labels. The
//! [`split::split_market`] operation carves a training set into the buyer's
//! root set and the per-seller private sets.

mod cache;
mod idx;
pub mod split;
mod synthetic;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

pub use cache::{read_cache, write_cache};
pub use idx::{load_idx, read_idx_images, read_idx_labels};
pub use split::{split_market, BuyerBias, Partition, SplitParams};
pub use synthetic::{make_synthetic, train_test_split, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset shape: {0}")]
    InvalidShape(String),

    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("seller pool exhausted: {pool} samples for {sellers} sellers")]
    PoolExhausted { pool: usize, sellers: usize },

    #[error("trigger patch of side {side} does not fit a {rows}x{cols} image")]
    TriggerTooLarge { side: usize, rows: usize, cols: usize },

    #[error("trigger needs {needed} features, sample has {dim}")]
    TriggerTooWide { needed: usize, dim: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How the flat feature vector maps onto the input domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLayout {
    Flat,
    /// Row-major grayscale image.
    Image { rows: usize, cols: usize },
}

/// A single labeled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
    layout: FeatureLayout,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        classes: usize,
        layout: FeatureLayout,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::LengthMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let FeatureLayout::Image { rows, cols } = layout {
            if rows * cols != features.ncols() {
                return Err(DataError::InvalidShape(format!(
                    "{rows}x{cols} image layout for {} features",
                    features.ncols()
                )));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            features,
            labels,
            classes,
            layout,
        })
    }

    pub fn from_samples(
        samples: &[Sample],
        dim: usize,
        classes: usize,
        layout: FeatureLayout,
    ) -> Result<Self, DataError> {
        let mut features = Array2::zeros((samples.len(), dim));
        for (mut row, s) in features.outer_iter_mut().zip(samples) {
            if s.features.len() != dim {
                return Err(DataError::InvalidShape(format!(
                    "sample of dimension {} in a dataset of dimension {dim}",
                    s.features.len()
                )));
            }
            row.assign(&ArrayView1::from(&s.features[..]));
        }
        Self::new(
            features,
            samples.iter().map(|s| s.label).collect(),
            classes,
            layout,
        )
    }

    /// An empty dataset with the same shape metadata.
    pub fn empty_like(&self) -> Self {
        Self {
            features: Array2::zeros((0, self.dim())),
            labels: Vec::new(),
            classes: self.classes,
            layout: self.layout,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            features: self.features.row(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Overwrite row `i` with `sample`.
    pub fn set_sample(&mut self, i: usize, sample: &Sample) {
        self.features
            .row_mut(i)
            .assign(&ArrayView1::from(&sample.features[..]));
        self.labels[i] = sample.label;
    }

    pub fn set_label(&mut self, i: usize, label: usize) {
        self.labels[i] = label;
    }

    /// A new dataset holding the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            layout: self.layout,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Empirical class distribution; all zeros for an empty dataset.
    pub fn class_proportions(&self) -> Vec<f64> {
        let n = self.len();
        self.class_counts()
            .into_iter()
            .map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect()
    }
}
