use rayon::prelude::*;

use super::cluster::{centroid, two_means};
use super::{check_round, id_order, weighted_sum, AggregateError, AggregationResult, Aggregator, RoundContext, Submission};
use crate::data::Dataset;
use crate::model::{distance, forward_loss, loss_and_grad, ModelParams};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Root-set loss of `global + sigmoid(logits) * delta` and its gradient with
/// respect to the mask logits.
pub fn mask_loss_and_grad(
    global: &ModelParams,
    delta: &[f64],
    logits: &[f64],
    root: &Dataset,
) -> Result<(f64, Vec<f64>), AggregateError> {
    if root.is_empty() {
        return Err(AggregateError::EmptyRootData);
    }
    for len in [delta.len(), logits.len()] {
        if len != global.len() {
            return Err(AggregateError::DimensionMismatch { expected: global.len(), actual: len });
        }
    }
    // Validates shapes and labels once.
    forward_loss(global, &root.features(), root.labels())?;
    let theta: Vec<f64> = global
        .as_slice()
        .iter()
        .zip(delta)
        .zip(logits)
        .map(|((w, g), z)| w + sigmoid(*z) * g)
        .collect();
    let (loss, grad_theta) = loss_and_grad(global, &theta, &root.features(), root.labels());
    let grad = grad_theta
        .iter()
        .zip(delta)
        .zip(logits)
        .map(|((dt, g), z)| {
            let s = sigmoid(*z);
            dt * g * s * (1.0 - s)
        })
        .collect();
    Ok((loss, grad))
}

/// Full-batch gradient descent on the mask logits from zero; returns the mask.
pub fn train_mask(
    global: &ModelParams,
    delta: &[f64],
    root: &Dataset,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>, AggregateError> {
    let mut logits = vec![0.0; delta.len()];
    for _ in 0..steps {
        let (_, grad) = mask_loss_and_grad(global, delta, &logits, root)?;
        for (z, g) in logits.iter_mut().zip(grad) {
            *z -= lr * g;
        }
    }
    Ok(logits.into_iter().map(sigmoid).collect())
}

/// Learned-mask clustering.
///
/// Each submission gets a mask trained on the root set; masks are split by
/// Euclidean 2-means and the larger cluster is selected with equal weights.
/// A size tie goes to the cluster whose averaged delta gives lower root loss.
#[derive(Debug, Clone)]
pub struct SkyMask {
    steps: usize,
    lr: f64,
}

impl SkyMask {
    pub fn new(steps: usize, lr: f64) -> Self {
        Self { steps, lr }
    }
}

impl Aggregator for SkyMask {
    fn name(&self) -> &'static str {
        "skymask"
    }

    fn aggregate(
        &mut self,
        submissions: &[Submission],
        ctx: &RoundContext<'_>,
    ) -> Result<AggregationResult, AggregateError> {
        let dim = check_round(submissions)?;
        if ctx.buyer_root.is_empty() {
            return Err(AggregateError::EmptyRootData);
        }
        let order = id_order(submissions);
        let masks: Vec<Vec<f64>> = order
            .par_iter()
            .map(|&i| train_mask(ctx.global, submissions[i].delta.as_slice(), ctx.buyer_root, self.steps, self.lr))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&[f64]> = masks.iter().map(Vec::as_slice).collect();
        let labels = two_means(&refs);

        let members = |k: usize| -> Vec<bool> { labels.iter().map(|&l| l == k).collect() };
        let centers = [centroid(&refs, &members(0), masks[0].len()), centroid(&refs, &members(1), masks[0].len())];
        let mut scores = vec![0.0; submissions.len()];
        for (pos, &i) in order.iter().enumerate() {
            scores[i] = -distance(&masks[pos], &centers[labels[pos]]);
        }

        let size = |k: usize| labels.iter().filter(|&&l| l == k).count();
        let mean_delta = |k: usize| {
            let chosen: Vec<usize> = (0..order.len()).filter(|&p| labels[p] == k).collect();
            let w = 1.0 / chosen.len() as f64;
            weighted_sum(dim, chosen.iter().map(|&p| (w, submissions[order[p]].delta.as_slice())))
        };
        let winner = match size(0).cmp(&size(1)) {
            std::cmp::Ordering::Greater => 0,
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Equal => {
                let loss = |k: usize| -> Result<f64, AggregateError> {
                    let model = ctx.global.with_delta(mean_delta(k)?.as_slice())?;
                    Ok(forward_loss(&model, &ctx.buyer_root.features(), ctx.buyer_root.labels())?.0)
                };
                let (l0, l1) = (loss(0)?, loss(1)?);
                if l1 < l0 {
                    1
                } else if l0 < l1 {
                    0
                } else {
                    labels[0]
                }
            }
        };

        let selected: Vec<usize> = (0..order.len())
            .filter(|&p| labels[p] == winner)
            .map(|p| order[p])
            .filter(|&i| submissions[i].delta.norm() > 0.0)
            .collect();
        if selected.is_empty() {
            return Ok(AggregationResult::empty(dim, scores));
        }
        let w = 1.0 / selected.len() as f64;
        let aggregated = weighted_sum(dim, selected.iter().map(|&i| (w, submissions[i].delta.as_slice())))?;
        Ok(AggregationResult {
            selected: selected.iter().map(|&i| submissions[i].seller_id).collect(),
            weights: vec![w; selected.len()],
            aggregated,
            scores,
        })
    }

    fn box_clone(&self) -> Box<dyn Aggregator> {
        Box::new(self.clone())
    }
}
