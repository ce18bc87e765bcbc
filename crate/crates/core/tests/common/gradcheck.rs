//! Central finite-difference checks of analytic gradients.

use gradmarket_core::aggregate::mask_loss_and_grad;
use gradmarket_core::data::{Dataset, FeatureLayout};
use gradmarket_core::model::{backward, forward_loss, Architecture, ModelParams};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-5;
/// Smallest allowed |pre-activation| so perturbations never cross a ReLU kink.
const KINK_MARGIN: f64 = 1e-3;

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn random_dataset<R: Rng>(rng: &mut R, n: usize, d: usize, k: usize) -> Dataset {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let y = (0..n).map(|_| rng.random_range(0..k)).collect();
    Dataset::new(x, y, k, FeatureLayout::Flat).unwrap()
}

fn random_params<R: Rng>(rng: &mut R, d: usize, k: usize) -> ModelParams {
    let arch = if rng.random_bool(0.5) { Architecture::Logreg } else { Architecture::Mlp { hidden: rng.random_range(1..=5) } };
    let zeros = ModelParams::zeros(arch, d, k);
    let values = (0..zeros.len()).map(|_| 0.7 * normal(rng)).collect();
    ModelParams::unflatten(arch, d, k, values).unwrap()
}

/// True when every hidden pre-activation stays clear of zero.
fn clear_of_kinks(params: &ModelParams, data: &Dataset) -> bool {
    let layers = params.to_layers();
    if layers.len() < 2 {
        return true;
    }
    let (w, b) = &layers[0];
    let z = data.features().dot(&w.t()) + b;
    z.iter().all(|v| v.abs() > KINK_MARGIN)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_difference(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let mut probe = at.to_vec();
    (0..at.len())
        .map(|j| {
            probe[j] = at[j] + STEP;
            let up = f(&probe);
            probe[j] = at[j] - STEP;
            let down = f(&probe);
            probe[j] = at[j];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Relative error of the model gradient on one random kink-free instance.
pub fn model_instance<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let (d, k, n) = (rng.random_range(1..=5), rng.random_range(2..=4), rng.random_range(1..=6));
        let data = random_dataset(rng, n, d, k);
        let params = random_params(rng, d, k);
        if !clear_of_kinks(&params, &data) {
            continue;
        }
        let (_, analytic) = backward(&params, &data.features(), data.labels()).unwrap();
        let loss = |v: &[f64]| {
            let p = ModelParams::unflatten(params.arch(), d, k, v.to_vec()).unwrap();
            forward_loss(&p, &data.features(), data.labels()).unwrap().0
        };
        return relative_error(&analytic, &central_difference(loss, params.as_slice()));
    }
}

/// Relative error of the mask-logit gradient on one random kink-free instance.
pub fn mask_instance<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let (d, k, n) = (rng.random_range(1..=4), rng.random_range(2..=3), rng.random_range(1..=5));
        let data = random_dataset(rng, n, d, k);
        let global = random_params(rng, d, k);
        let delta: Vec<f64> = (0..global.len()).map(|_| 0.5 * normal(rng)).collect();
        let logits: Vec<f64> = (0..global.len()).map(|_| normal(rng)).collect();
        let theta: Vec<f64> = global
            .as_slice()
            .iter()
            .zip(&delta)
            .zip(&logits)
            .map(|((w, g), z)| w + g / (1.0 + (-z).exp()))
            .collect();
        let at = ModelParams::unflatten(global.arch(), d, k, theta).unwrap();
        if !clear_of_kinks(&at, &data) {
            continue;
        }
        let (_, analytic) = mask_loss_and_grad(&global, &delta, &logits, &data).unwrap();
        let loss = |z: &[f64]| mask_loss_and_grad(&global, &delta, z, &data).unwrap().0;
        return relative_error(&analytic, &central_difference(loss, &logits));
    }
}
