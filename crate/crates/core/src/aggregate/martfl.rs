use super::cluster::two_means_1d;
use super::{check_round, id_order, weighted_sum, AggregateError, AggregationResult, Aggregator, RoundContext, Submission};
use crate::config::ReferenceUpdate;
use crate::model::{cosine, GradientVector};

/// Cosine scores closer than this count as identical.
const SCORE_TIE_TOLERANCE: f64 = 1e-12;

/// Cosine scoring against a carried reference, then a 1-D 2-means split.
///
/// The upper cluster is selected and weighted by clipped score. The reference
/// starts as the first round's root gradient and afterwards follows either the
/// aggregate or the selected submission closest to it.
#[derive(Debug, Clone)]
pub struct MartFl {
    update: ReferenceUpdate,
    reference: Option<GradientVector>,
}

impl MartFl {
    pub fn new(update: ReferenceUpdate) -> Self {
        Self { update, reference: None }
    }

    pub fn with_reference(update: ReferenceUpdate, reference: GradientVector) -> Self {
        Self { update, reference: Some(reference) }
    }

    pub fn reference(&self) -> Option<&GradientVector> {
        self.reference.as_ref()
    }

    fn next_reference(&self, submissions: &[Submission], selected: &[usize], aggregated: &GradientVector) -> Option<GradientVector> {
        if aggregated.norm() == 0.0 {
            return None;
        }
        match self.update {
            ReferenceUpdate::Aggregate => Some(aggregated.clone()),
            ReferenceUpdate::Medoid => {
                let mut best: Option<(f64, usize)> = None;
                for &i in selected {
                    let c = cosine(submissions[i].delta.as_slice(), aggregated.as_slice()).unwrap_or(f64::NEG_INFINITY);
                    if best.is_none_or(|(b, _)| c > b) {
                        best = Some((c, i));
                    }
                }
                best.map(|(_, i)| submissions[i].delta.clone())
            }
        }
    }
}

impl Aggregator for MartFl {
    fn name(&self) -> &'static str {
        "martfl"
    }

    fn aggregate(
        &mut self,
        submissions: &[Submission],
        ctx: &RoundContext<'_>,
    ) -> Result<AggregationResult, AggregateError> {
        let dim = check_round(submissions)?;
        let reference = self.reference.get_or_insert_with(|| ctx.buyer_reference.clone()).clone();
        if reference.len() != dim {
            return Err(AggregateError::DimensionMismatch { expected: dim, actual: reference.len() });
        }
        if reference.norm() == 0.0 {
            return Err(AggregateError::ZeroReference);
        }

        let scores: Vec<Option<f64>> = submissions
            .iter()
            .map(|s| cosine(s.delta.as_slice(), reference.as_slice()))
            .collect();
        let candidates: Vec<usize> = id_order(submissions).into_iter().filter(|&i| scores[i].is_some()).collect();
        let flat_scores: Vec<f64> = scores.iter().map(|s| s.unwrap_or(0.0)).collect();
        if candidates.is_empty() {
            return Ok(AggregationResult::empty(dim, flat_scores));
        }

        let points: Vec<(f64, usize)> = candidates.iter().map(|&i| (flat_scores[i], submissions[i].seller_id)).collect();
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
        let split = if hi - lo <= SCORE_TIE_TOLERANCE { None } else { two_means_1d(&points) };
        let selected: Vec<usize> = match split {
            Some(upper) => candidates.iter().zip(upper).filter(|(_, u)| *u).map(|(&i, _)| i).collect(),
            None => candidates,
        };

        let clipped: Vec<f64> = selected.iter().map(|&i| flat_scores[i].max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            clipped.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / selected.len() as f64; selected.len()]
        };
        let aggregated = weighted_sum(
            dim,
            selected.iter().zip(&weights).map(|(&i, &w)| (w, submissions[i].delta.as_slice())),
        )?;
        if let Some(next) = self.next_reference(submissions, &selected, &aggregated) {
            self.reference = Some(next);
        }
        Ok(AggregationResult {
            selected: selected.iter().map(|&i| submissions[i].seller_id).collect(),
            weights,
            aggregated,
            scores: flat_scores,
        })
    }

    fn box_clone(&self) -> Box<dyn Aggregator> {
        Box::new(self.clone())
    }
}
