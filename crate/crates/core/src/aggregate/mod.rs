//! Swappable aggregation rules.
//!
//! An aggregator maps one round's submissions plus the buyer's reference
//! material to a selection set, per-selected weights, and the aggregated
//! delta. Aggregators only see seller ids, deltas, and sample counts; they
//! never see whether a seller is malicious.

mod cluster;
mod fedavg;
mod fltrust;
mod martfl;
mod skymask;

use thiserror::Error;

use crate::config::{AggregatorConfig, AggregatorKind};
use crate::data::Dataset;
use crate::model::{GradientVector, ModelError, ModelParams};

pub use cluster::{two_means, two_means_1d};
pub use fedavg::{fedavg, FedAvg};
pub use fltrust::{fltrust, FlTrust};
pub use martfl::MartFl;
pub use skymask::{mask_loss_and_grad, train_mask, SkyMask};

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no submissions in round")]
    EmptyRound,

    #[error("reference vector has zero norm")]
    ZeroReference,

    #[error("buyer root dataset is empty")]
    EmptyRootData,

    #[error("submission dimension {actual} does not match {expected}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One seller's delta for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub seller_id: usize,
    pub delta: GradientVector,
    /// Size of the seller's local dataset.
    pub num_samples: usize,
}

/// Buyer-side material available to an aggregator in a round.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub global: &'a ModelParams,
    /// Root gradient `g_B` trained on the buyer's root set this round.
    pub buyer_reference: &'a GradientVector,
    pub buyer_root: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    /// Selected seller ids, ascending.
    pub selected: Vec<usize>,
    /// Normalized weight of each selected seller, aligned with `selected`.
    pub weights: Vec<f64>,
    pub aggregated: GradientVector,
    /// Diagnostic score of every submission, aligned with the input order.
    pub scores: Vec<f64>,
}

impl AggregationResult {
    pub fn empty(dim: usize, scores: Vec<f64>) -> Self {
        Self {
            selected: Vec::new(),
            weights: Vec::new(),
            aggregated: GradientVector::zeros(dim),
            scores,
        }
    }
}

pub trait Aggregator: Send + Sync {
    fn name(&self) -> &'static str;

    fn aggregate(
        &mut self,
        submissions: &[Submission],
        ctx: &RoundContext<'_>,
    ) -> Result<AggregationResult, AggregateError>;

    fn box_clone(&self) -> Box<dyn Aggregator>;
}

impl Clone for Box<dyn Aggregator> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub fn build_aggregator(config: &AggregatorConfig) -> Box<dyn Aggregator> {
    match config.kind {
        AggregatorKind::Fedavg => Box::new(FedAvg),
        AggregatorKind::Fltrust => Box::new(FlTrust),
        AggregatorKind::Martfl => Box::new(MartFl::new(config.reference)),
        AggregatorKind::Skymask => Box::new(SkyMask::new(config.mask_steps, config.mask_lr)),
    }
}

/// Check the round is nonempty and every delta has the same dimension.
fn check_round(submissions: &[Submission]) -> Result<usize, AggregateError> {
    let first = submissions.first().ok_or(AggregateError::EmptyRound)?;
    let dim = first.delta.len();
    for s in submissions {
        if s.delta.len() != dim {
            return Err(AggregateError::DimensionMismatch {
                expected: dim,
                actual: s.delta.len(),
            });
        }
    }
    Ok(dim)
}

/// `sum_i weights[i] * vectors[i]`.
fn weighted_sum<'a>(
    dim: usize,
    terms: impl IntoIterator<Item = (f64, &'a [f64])>,
) -> Result<GradientVector, AggregateError> {
    let mut out = vec![0.0; dim];
    for (w, v) in terms {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(GradientVector::new(out)?)
}

/// Indices of `submissions` in ascending seller-id order.
fn id_order(submissions: &[Submission]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..submissions.len()).collect();
    order.sort_by_key(|&i| submissions[i].seller_id);
    order
}
