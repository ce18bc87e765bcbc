//! Random small traces for metric checks.

use gradmarket_core::attack::{SellerFlag, SellerRole};
use gradmarket_core::engine::{RoundLedger, RunTrace, SubmissionRecord};
use gradmarket_core::model::{Architecture, ModelParams};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn random_trace<R: Rng>(rng: &mut R) -> RunTrace {
    let n = rng.random_range(1..=6);
    let t = rng.random_range(0..=10);
    let roles: Vec<SellerRole> = (0..n)
        .map(|seller_id| SellerRole {
            seller_id,
            flag: if rng.random_bool(0.35) { SellerFlag::Malicious } else { SellerFlag::Benign },
            sybil_group: None,
        })
        .collect();
    // A few repeated values keep ties and zero-variance cases in play.
    let palette: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..5.0)).collect();
    let mut ledgers = Vec::with_capacity(t);
    for round in 1..=t {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(rng);
        let k = rng.random_range(1..=n);
        let mut sampled = ids[..k].to_vec();
        sampled.sort_unstable();
        let select_all = rng.random_bool(0.2);
        let submissions: Vec<SubmissionRecord> = sampled
            .iter()
            .map(|&seller_id| SubmissionRecord {
                seller_id,
                num_samples: rng.random_range(1..100),
                score: rng.random_range(-1.0..1.0),
                divergence: if rng.random_bool(0.5) {
                    palette[rng.random_range(0..palette.len())]
                } else {
                    rng.random_range(0.0..5.0)
                },
                paid: select_all || rng.random_bool(0.5),
            })
            .collect();
        let selected: Vec<usize> = submissions.iter().filter(|s| s.paid).map(|s| s.seller_id).collect();
        let weights = vec![1.0 / selected.len().max(1) as f64; selected.len()];
        ledgers.push(RoundLedger {
            round,
            cost: selected.len(),
            sampled,
            selected,
            weights,
            submissions,
            accuracy: rng.random_range(0.0..1.0),
            asr: rng.random_bool(0.5).then(|| rng.random_range(0.0..1.0)),
        });
    }
    RunTrace {
        config_hash: "test".into(),
        seed: 0,
        repeat: 0,
        num_sellers: n,
        roles,
        ledgers,
        final_model: ModelParams::zeros(Architecture::Logreg, 1, 2),
    }
}
