//! Run-level and per-round marketplace metrics computed from a trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{settle, RoundLedger, RunTrace};
use crate::model::{ModelError, ModelParams};

/// First round reaching a milestone and the gradients paid up to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub rounds: usize,
    pub gradients: usize,
}

/// `T* = min{t : acc_t >= milestone}` and `CoC = sum_{t <= T*} C_t`.
pub fn cost_of_convergence(accuracy: &[f64], cost: &[usize], milestone: f64) -> Option<Convergence> {
    let hit = accuracy.iter().position(|&a| a >= milestone)?;
    Some(Convergence {
        rounds: hit + 1,
        gradients: cost[..=hit].iter().sum(),
    })
}

fn malicious_set(trace: &RunTrace) -> BTreeSet<usize> {
    trace.roles.iter().filter(|r| r.is_malicious()).map(|r| r.seller_id).collect()
}

fn benign_ids(trace: &RunTrace) -> Vec<usize> {
    trace.roles.iter().filter(|r| !r.is_malicious()).map(|r| r.seller_id).collect()
}

/// Share of malicious sellers among one round's selections.
pub fn round_malicious_fraction(ledger: &RoundLedger, malicious: &BTreeSet<usize>) -> Option<f64> {
    if ledger.selected.is_empty() {
        return None;
    }
    let m = ledger.selected.iter().filter(|id| malicious.contains(id)).count();
    Some(m as f64 / ledger.selected.len() as f64)
}

/// Fraction of all selected gradients that came from malicious sellers.
pub fn malicious_selection_rate(trace: &RunTrace) -> Option<f64> {
    let malicious = malicious_set(trace);
    let total: usize = trace.ledgers.iter().map(|l| l.selected.len()).sum();
    if total == 0 {
        return None;
    }
    let bad: usize = trace
        .ledgers
        .iter()
        .map(|l| l.selected.iter().filter(|id| malicious.contains(id)).count())
        .sum();
    Some(bad as f64 / total as f64)
}

/// Average per-round, per-seller selection probability over `sellers`.
pub fn per_seller_selection_rate(trace: &RunTrace, sellers: &[usize]) -> Option<f64> {
    if trace.ledgers.is_empty() || sellers.is_empty() {
        return None;
    }
    let set: BTreeSet<usize> = sellers.iter().copied().collect();
    let hits: usize = trace
        .ledgers
        .iter()
        .map(|l| l.selected.iter().filter(|id| set.contains(id)).count())
        .sum();
    Some(hits as f64 / (trace.ledgers.len() * set.len()) as f64)
}

/// Pearson correlation; `None` when either side has zero variance or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r between divergence and the 0/1 selection indicator, pooled over all submissions.
pub fn divergence_selection_correlation(trace: &RunTrace) -> Option<f64> {
    let (div, sel): (Vec<f64>, Vec<f64>) = trace
        .ledgers
        .iter()
        .flat_map(|l| &l.submissions)
        .map(|s| (s.divergence, if s.paid { 1.0 } else { 0.0 }))
        .unzip();
    pearson(&div, &sel)
}

/// Gini coefficient, 0 when the mean is 0.
pub fn payment_gini(payments: &[f64]) -> f64 {
    let n = payments.len();
    let total: f64 = payments.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = payments.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x)
        .sum();
    (weighted / (n as f64 * total)).max(0.0)
}

/// Shannon entropy in bits of a count distribution, with `0 log 0 = 0`.
pub fn entropy_bits(counts: impl IntoIterator<Item = usize>) -> Option<f64> {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let h = -counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p.log2()
        })
        .sum::<f64>();
    Some(h.max(0.0))
}

/// Entropy of selected seller ids across the run, raw bits and divided by `log2 N`.
pub fn selection_diversity(trace: &RunTrace) -> Option<(f64, f64)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for id in trace.ledgers.iter().flat_map(|l| &l.selected) {
        *counts.entry(*id).or_default() += 1;
    }
    let h = entropy_bits(counts.into_values())?;
    let max = (trace.num_sellers as f64).log2();
    let normalized = if max > 0.0 { h / max } else { 0.0 };
    Some((h, normalized))
}

/// Jaccard index; two empty sets are identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Mean Jaccard overlap of consecutive selection sets.
pub fn selection_stability(trace: &RunTrace) -> Option<f64> {
    if trace.ledgers.len() < 2 {
        return None;
    }
    let sum: f64 = trace
        .ledgers
        .windows(2)
        .map(|w| jaccard(&w[0].selected, &w[1].selected))
        .sum();
    Some(sum / (trace.ledgers.len() - 1) as f64)
}

/// Fraction of triggered inputs predicted as `target`; `None` on an empty set.
pub fn attack_success_rate(
    model: &ModelParams,
    triggered: &Dataset,
    target: usize,
) -> Result<Option<f64>, ModelError> {
    if triggered.is_empty() {
        return Ok(None);
    }
    let predictions = model.predict(&triggered.features())?;
    let hits = predictions.iter().filter(|&&p| p == target).count();
    Ok(Some(hits as f64 / predictions.len() as f64))
}

/// Mean benign and malicious selections per round.
pub fn cost_composition(trace: &RunTrace) -> Option<(f64, f64)> {
    if trace.ledgers.is_empty() {
        return None;
    }
    let malicious = malicious_set(trace);
    let (mut benign, mut bad) = (0usize, 0usize);
    for id in trace.ledgers.iter().flat_map(|l| &l.selected) {
        if malicious.contains(id) {
            bad += 1;
        } else {
            benign += 1;
        }
    }
    let t = trace.ledgers.len() as f64;
    Some((benign as f64 / t, bad as f64 / t))
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub cost: usize,
    pub accuracy: f64,
    pub asr: Option<f64>,
    pub msr_fraction: Option<f64>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneResult {
    pub milestone: f64,
    /// Rounds to reach the milestone.
    pub rounds: Option<usize>,
    /// Gradients paid up to and including that round.
    pub gradients: Option<usize>,
}

/// Run-level metrics, serialized as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub repeat: usize,
    pub num_sellers: usize,
    pub num_rounds: usize,
    pub num_malicious: usize,
    pub malicious_sellers: Vec<usize>,
    pub final_accuracy: Option<f64>,
    pub final_asr: Option<f64>,
    pub total_cost: usize,
    pub milestones: Vec<MilestoneResult>,
    pub msr_fraction: Option<f64>,
    pub msr_rate: Option<f64>,
    pub bsr: Option<f64>,
    pub divergence_selection_r: Option<f64>,
    pub payment_gini: f64,
    pub selection_entropy_bits: Option<f64>,
    pub selection_entropy_normalized: Option<f64>,
    pub selection_stability: Option<f64>,
    pub cost_benign: Option<f64>,
    pub cost_malicious: Option<f64>,
    pub payments: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summary: RunSummary,
    pub rounds: Vec<RoundMetrics>,
}

pub fn compute_report(trace: &RunTrace, milestones: &[f64]) -> MetricsReport {
    let malicious = malicious_set(trace);
    let benign = benign_ids(trace);
    let malicious_ids: Vec<usize> = malicious.iter().copied().collect();

    let rounds: Vec<RoundMetrics> = trace
        .ledgers
        .iter()
        .map(|l| RoundMetrics {
            round: l.round,
            cost: l.cost,
            accuracy: l.accuracy,
            asr: l.asr,
            msr_fraction: round_malicious_fraction(l, &malicious),
            selected: l.selected.clone(),
        })
        .collect();
    let accuracy: Vec<f64> = rounds.iter().map(|r| r.accuracy).collect();
    let cost: Vec<usize> = rounds.iter().map(|r| r.cost).collect();
    let payments = settle(trace);
    let benign_payments: Vec<f64> = benign.iter().map(|&i| payments[i] as f64).collect();
    let diversity = selection_diversity(trace);
    let composition = cost_composition(trace);

    let summary = RunSummary {
        config_hash: trace.config_hash.clone(),
        seed: trace.seed,
        repeat: trace.repeat,
        num_sellers: trace.num_sellers,
        num_rounds: trace.ledgers.len(),
        num_malicious: malicious_ids.len(),
        final_accuracy: rounds.last().map(|r| r.accuracy),
        final_asr: rounds.last().and_then(|r| r.asr),
        total_cost: cost.iter().sum(),
        milestones: milestones
            .iter()
            .map(|&m| {
                let hit = cost_of_convergence(&accuracy, &cost, m);
                MilestoneResult {
                    milestone: m,
                    rounds: hit.map(|h| h.rounds),
                    gradients: hit.map(|h| h.gradients),
                }
            })
            .collect(),
        msr_fraction: malicious_selection_rate(trace),
        msr_rate: per_seller_selection_rate(trace, &malicious_ids),
        bsr: per_seller_selection_rate(trace, &benign),
        divergence_selection_r: divergence_selection_correlation(trace),
        payment_gini: payment_gini(&benign_payments),
        selection_entropy_bits: diversity.map(|d| d.0),
        selection_entropy_normalized: diversity.map(|d| d.1),
        selection_stability: selection_stability(trace),
        cost_benign: composition.map(|c| c.0),
        cost_malicious: composition.map(|c| c.1),
        malicious_sellers: malicious_ids,
        payments,
    };
    MetricsReport { summary, rounds }
}
