use super::{check_round, id_order, AggregateError, AggregationResult, Aggregator, RoundContext, Submission};
use crate::model::{cosine, GradientVector};

/// Trust-weighted average of submissions rescaled to the root gradient's norm.
///
/// Trust is the cosine to the root gradient clipped at zero; sellers with
/// positive trust are selected.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlTrust;

pub fn fltrust(
    submissions: &[Submission],
    root: &GradientVector,
) -> Result<AggregationResult, AggregateError> {
    let dim = check_round(submissions)?;
    if root.len() != dim {
        return Err(AggregateError::DimensionMismatch { expected: dim, actual: root.len() });
    }
    let root_norm = root.norm();
    if root_norm == 0.0 {
        return Err(AggregateError::ZeroReference);
    }
    let trust: Vec<f64> = submissions
        .iter()
        .map(|s| cosine(s.delta.as_slice(), root.as_slice()).map_or(0.0, |c| c.max(0.0)))
        .collect();
    let selected: Vec<usize> = id_order(submissions).into_iter().filter(|&i| trust[i] > 0.0).collect();
    let total: f64 = selected.iter().map(|&i| trust[i]).sum();
    if selected.is_empty() || total <= 0.0 {
        return Ok(AggregationResult::empty(dim, trust));
    }

    let weights: Vec<f64> = selected.iter().map(|&i| trust[i] / total).collect();
    let mut out = vec![0.0; dim];
    for (&i, &w) in selected.iter().zip(&weights) {
        let delta = submissions[i].delta.as_slice();
        let scale = w * root_norm / submissions[i].delta.norm();
        for (o, x) in out.iter_mut().zip(delta) {
            *o += scale * x;
        }
    }
    Ok(AggregationResult {
        selected: selected.iter().map(|&i| submissions[i].seller_id).collect(),
        weights,
        aggregated: GradientVector::new(out)?,
        scores: trust,
    })
}

impl Aggregator for FlTrust {
    fn name(&self) -> &'static str {
        "fltrust"
    }

    fn aggregate(
        &mut self,
        submissions: &[Submission],
        ctx: &RoundContext<'_>,
    ) -> Result<AggregationResult, AggregateError> {
        fltrust(submissions, ctx.buyer_reference)
    }

    fn box_clone(&self) -> Box<dyn Aggregator> {
        Box::new(*self)
    }
}
