use std::collections::HashSet;

use gradmarket_core::attack::{assign_roles, poison_dataset, sybil_postprocess, AttackSpec};
use gradmarket_core::config::{load_config_with_overrides, AttackKind, MarketplaceConfig};
use gradmarket_core::data::{make_synthetic, split_market, BuyerBias, Dataset, SplitParams, SyntheticSpec};
use gradmarket_core::engine::{load_data, run_experiment, run_repeats, settle, Marketplace};
use gradmarket_core::metrics::compute_report;
use gradmarket_core::model::GradientVector;
use proptest::prelude::*;

fn config(overrides: &[&str]) -> MarketplaceConfig {
    let base = "num_sellers: 8\nnum_rounds: 6\nsample_fraction: 0.5\nrepeats: 2\nbuyer_root_fraction: 0.05\ndataset: {samples: 900}\n";
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    load_config_with_overrides(base, &overrides).unwrap()
}

#[test]
fn test_payment_conservation_and_ledger_shape() {
    for agg in ["fedavg", "fltrust", "martfl", "skymask"] {
        for attack in ["none", "backdoor", "label_flip", "sybil_backdoor"] {
            let c = config(&[&format!("aggregator={agg}"), &format!("attack={attack}"), "aggregator.mask_steps=3"]);
            let trace = run_experiment(&c, 1).unwrap();
            assert_eq!(trace.ledgers.len(), c.num_rounds);
            let paid: u64 = settle(&trace).iter().sum();
            let cost: usize = trace.ledgers.iter().map(|l| l.cost).sum();
            assert_eq!(paid as usize, cost, "{agg}/{attack}");
            for l in &trace.ledgers {
                assert_eq!(l.sampled.len(), c.sampled_count());
                assert_eq!(l.cost, l.selected.len());
                for s in &l.submissions {
                    assert_eq!(s.paid, l.selected.contains(&s.seller_id));
                }
                assert!(l.selected.iter().all(|id| l.sampled.contains(id)));
            }
        }
    }
}

#[test]
fn test_model_update_identity() {
    let c = config(&["aggregator=martfl", "attack=sybil_backdoor", "attack.adversary_fraction=0.25"]);
    let (train, test) = load_data(&c, 5).unwrap();
    let mut market = Marketplace::new(&c, 5, &train, &test).unwrap();
    let w0 = market.global().as_slice().to_vec();
    let mut sum = vec![0.0; w0.len()];
    for _ in 0..c.num_rounds {
        market.run_round().unwrap();
        for (s, g) in sum.iter_mut().zip(market.last_applied().as_slice()) {
            *s += g;
        }
    }
    for ((w, a), b) in market.global().as_slice().iter().zip(&w0).zip(&sum) {
        assert!((w - (a + b)).abs() < 1e-9);
    }
}

#[test]
fn test_benign_path_purity() {
    // attack=none ignores every attack parameter.
    let a = run_experiment(&config(&["attack=none"]), 0).unwrap();
    let b = run_experiment(&config(&["attack=none", "attack.adversary_fraction=0.5", "attack.poison_rate=0.9"]), 0).unwrap();
    assert_eq!(a.roles, b.roles);
    assert_eq!(a.ledgers, b.ledgers);
    assert_eq!(a.final_model, b.final_model);
}

#[test]
fn test_benign_data_untouched_by_attacks() {
    let clean = config(&["attack=none"]);
    let (train, test) = load_data(&clean, 3).unwrap();
    let reference = Marketplace::new(&clean, 3, &train, &test).unwrap();
    for attack in ["backdoor", "label_flip", "sybil_backdoor"] {
        let c = config(&[&format!("attack={attack}"), "attack.adversary_fraction=0.5"]);
        let market = Marketplace::new(&c, 3, &train, &test).unwrap();
        assert_eq!(market.roles().iter().filter(|r| r.is_malicious()).count(), 4);
        for role in market.roles() {
            let i = role.seller_id;
            assert_eq!(market.partition().seller_sets[i], reference.partition().seller_sets[i]);
            if !role.is_malicious() {
                assert_eq!(market.seller_data()[i], reference.seller_data()[i]);
            }
            assert_eq!(role.sybil_group.is_some(), attack == "sybil_backdoor" && role.is_malicious());
        }
    }
}

#[test]
fn test_repeat_seeds_and_determinism() {
    let c = config(&["attack=backdoor"]);
    let traces = run_repeats(&c).unwrap();
    assert_eq!(traces.len(), 2);
    for (r, t) in traces.iter().enumerate() {
        assert_eq!(t.seed, c.repeat_seed(r));
        assert_eq!(t, &run_experiment(&c, r).unwrap());
    }
    assert_ne!(traces[0].ledgers, traces[1].ledgers);
}

#[test]
fn test_default_config_reaches_accuracy() {
    let c = load_config_with_overrides("attack: none", &["repeats=1".into()]).unwrap();
    let trace = run_experiment(&c, 0).unwrap();
    let report = compute_report(&trace, &c.milestones);
    assert!(report.summary.final_accuracy.unwrap() > 0.90);
}

#[test]
fn test_fedavg_full_payment_count() {
    let c = config(&["aggregator=fedavg", "num_rounds=20"]);
    let trace = run_experiment(&c, 0).unwrap();
    assert_eq!(settle(&trace).iter().sum::<u64>() as usize, 20 * c.sampled_count());
}

fn split_inputs(n: usize, k: usize, seed: u64) -> Dataset {
    make_synthetic(&SyntheticSpec::new(k, k + 2, n), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prop_split_is_a_partition(
        seed in any::<u64>(),
        sellers in 1usize..20,
        k in 2usize..5,
        noise in 0.0f64..2.0,
        biased in any::<bool>(),
    ) {
        let data = split_inputs(600, k, seed);
        let bias = if biased { BuyerBias::Dirichlet { alpha: 0.3 } } else { BuyerBias::Unbiased };
        let params = SplitParams { num_sellers: sellers, buyer_root_fraction: 0.02, bias, seller_noise: noise };
        let p = split_market(&data, &data, &params, None, seed).unwrap();
        prop_assert_eq!(p.buyer_root.len(), 12);
        let mut seen = HashSet::new();
        for &i in p.buyer_indices.iter().chain(p.seller_indices.iter().flatten()) {
            prop_assert!(seen.insert(i));
        }
        prop_assert_eq!(seen.len(), data.len());
        let sizes: Vec<usize> = p.seller_sets.iter().map(Dataset::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn prop_poison_count_exact(seed in any::<u64>(), rate in 0.0f64..=1.0, n in 10usize..200) {
        let data = make_synthetic(&SyntheticSpec::new(3, 8, n.max(30)), seed).unwrap();
        let mut c = config(&["attack=backdoor"]);
        c.attack.poison_rate = rate;
        let spec = AttackSpec::from_config(&c.attack, data.layout(), data.dim()).unwrap();
        let poisoned = poison_dataset(&data, &spec, seed);
        let changed = (0..data.len()).filter(|&i| poisoned.sample(i) != data.sample(i) || poisoned.labels()[i] != data.labels()[i]).count();
        let expected = (rate * data.len() as f64).round() as usize;
        // Rows already carrying the trigger and the target label stay equal.
        prop_assert!(changed <= expected);
        let triggered = (0..data.len()).filter(|&i| poisoned.sample(i).features[data.dim() - 8..].iter().all(|&v| v == 1.0)).count();
        prop_assert!(triggered >= expected);
    }

    #[test]
    fn prop_sybil_convexity(
        raw in prop::collection::vec(-5.0f64..5.0, 1..10),
        shift in prop::collection::vec(-5.0f64..5.0, 10),
        lambda in 0.0f64..=1.0,
    ) {
        let target: Vec<f64> = raw.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let (r, t) = (GradientVector::new(raw.clone()).unwrap(), GradientVector::new(target.clone()).unwrap());
        let out = sybil_postprocess(&r, &t, lambda).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let lhs = dist(out.as_slice(), &target);
        let rhs = lambda * dist(&raw, &target);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
    }

    #[test]
    fn prop_roles_count(n in 1usize..60, frac in 0.0f64..0.99, seed in any::<u64>()) {
        let m = ((frac * n as f64) + 1e-9).floor() as usize;
        prop_assume!(m < n);
        let roles = assign_roles(n, m, AttackKind::Backdoor, seed);
        prop_assert_eq!(roles.iter().filter(|r| r.is_malicious()).count(), m);
    }
}
