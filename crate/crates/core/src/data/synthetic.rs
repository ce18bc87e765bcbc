//! Gaussian-mixture classification data.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, FeatureLayout};
use crate::config::rng_for;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    /// Norm of each class mean.
    pub separation: f64,
    pub noise_std: f64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, dim: usize, samples: usize) -> Self {
        Self {
            classes,
            dim,
            samples,
            separation: 3.5,
            noise_std: 1.0,
        }
    }
}

/// Balanced Gaussian mixture with class `c` centred on `separation * e_c`.
///
/// Class means lie on distinct coordinate axes, so they are mutually
/// orthogonal and the trailing `dim - classes` features carry no label
/// information. Features are rescaled by one global affine map into `[0, 1]`
/// and rows are returned in a seeded random order.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, DataError> {
    let SyntheticSpec {
        classes,
        dim,
        samples,
        separation,
        noise_std,
    } = *spec;
    if classes < 2 || dim < classes || samples < 10 * classes {
        return Err(DataError::InvalidShape(format!(
            "need K >= 2, d >= K, n >= 10K; got K={classes}, d={dim}, n={samples}"
        )));
    }
    if !(separation.is_finite() && separation > 0.0 && noise_std.is_finite() && noise_std > 0.0) {
        return Err(DataError::InvalidShape(
            "separation and noise_std must be positive".into(),
        ));
    }

    let mut rng = rng_for(seed);
    let noise = Normal::new(0.0, noise_std).expect("positive std");

    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);

    let mut features = Array2::zeros((samples, dim));
    for (mut row, &label) in features.outer_iter_mut().zip(&labels) {
        for v in row.iter_mut() {
            *v = noise.sample(&mut rng);
        }
        row[label] += separation;
    }

    let lo = features.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = features.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    features.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));

    Dataset::new(features, labels, classes, FeatureLayout::Flat)
}

/// Hold out the first `round(test_fraction * n)` rows as the test set.
///
/// Rows are expected to be in random order already (as produced by
/// [`make_synthetic`]).
pub fn train_test_split(data: &Dataset, test_fraction: f64) -> (Dataset, Dataset) {
    let n = data.len();
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    let test: Vec<usize> = (0..n_test).collect();
    let train: Vec<usize> = (n_test..n).collect();
    (data.select(&train), data.select(&test))
}
