use super::{check_round, id_order, weighted_sum, AggregateError, AggregationResult, Aggregator, RoundContext, Submission};

/// Sample-count weighted average over every submission.
#[derive(Debug, Clone, Copy, Default)]
pub struct FedAvg;

pub fn fedavg(submissions: &[Submission]) -> Result<AggregationResult, AggregateError> {
    let dim = check_round(submissions)?;
    let order = id_order(submissions);
    let total: usize = submissions.iter().map(|s| s.num_samples).sum();
    let weight = |s: &Submission| {
        if total == 0 {
            1.0 / submissions.len() as f64
        } else {
            s.num_samples as f64 / total as f64
        }
    };
    let weights: Vec<f64> = order.iter().map(|&i| weight(&submissions[i])).collect();
    let aggregated = weighted_sum(
        dim,
        order.iter().zip(&weights).map(|(&i, &w)| (w, submissions[i].delta.as_slice())),
    )?;
    Ok(AggregationResult {
        selected: order.iter().map(|&i| submissions[i].seller_id).collect(),
        weights,
        aggregated,
        scores: submissions.iter().map(weight).collect(),
    })
}

impl Aggregator for FedAvg {
    fn name(&self) -> &'static str {
        "fedavg"
    }

    fn aggregate(
        &mut self,
        submissions: &[Submission],
        _ctx: &RoundContext<'_>,
    ) -> Result<AggregationResult, AggregateError> {
        fedavg(submissions)
    }

    fn box_clone(&self) -> Box<dyn Aggregator> {
        Box::new(*self)
    }
}
