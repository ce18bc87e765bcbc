//! Marketplace split: buyer root set, seller sets, and test sets.
//!
//! Seller class mixes are multiplicative perturbations of the buyer root's
//! class distribution. Targets are first made jointly feasible with the seller
//! pool (Sinkhorn scaling to the pool's class counts and the equal seller
//! sizes), then rounded seller by seller with error diffusion, so no class is
//! over-drawn and every pool sample is assigned.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::{DataError, Dataset};
use crate::attack::Trigger;
use crate::config::{derive_seed, rng_for, BuyerBiasKind, MarketplaceConfig};

/// Floor applied to perturbed class weights before renormalizing.
pub const MIN_CLASS_WEIGHT: f64 = 1e-6;

const SINKHORN_MAX_ITERS: usize = 10_000;
const SINKHORN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuyerBias {
    Unbiased,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub num_sellers: usize,
    pub buyer_root_fraction: f64,
    pub bias: BuyerBias,
    /// Half-width `f` of the multiplicative noise `1 + u`, `u ~ U(-f, f)`.
    pub seller_noise: f64,
}

impl SplitParams {
    pub fn from_config(config: &MarketplaceConfig) -> Self {
        Self {
            num_sellers: config.num_sellers,
            buyer_root_fraction: config.buyer_root_fraction,
            bias: match config.buyer_bias.kind {
                BuyerBiasKind::Unbiased => BuyerBias::Unbiased,
                BuyerBiasKind::Dirichlet => BuyerBias::Dirichlet {
                    alpha: config.buyer_bias.alpha,
                },
            },
            seller_noise: config.seller_noise,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub buyer_root: Dataset,
    pub seller_sets: Vec<Dataset>,
    pub test_clean: Dataset,
    /// Triggered copies of clean test samples whose label differs from the
    /// attack target. Labels are the original ones. Empty without a trigger.
    pub test_triggered: Dataset,
    /// Empirical class distribution of each seller set.
    pub class_proportions: Vec<Vec<f64>>,
    /// Training-set row indices of the buyer root.
    pub buyer_indices: Vec<usize>,
    /// Training-set row indices of each seller set.
    pub seller_indices: Vec<Vec<usize>>,
}

/// Split `train` into buyer root and seller sets, and build the test sets.
pub fn split_market(
    train: &Dataset,
    test: &Dataset,
    params: &SplitParams,
    trigger: Option<&Trigger>,
    seed: u64,
) -> Result<Partition, DataError> {
    let n = train.len();
    let k = train.classes();
    let sellers = params.num_sellers;
    let root_size = (params.buyer_root_fraction * n as f64).round() as usize;
    if sellers == 0 || n < sellers + root_size {
        return Err(DataError::PoolExhausted {
            pool: n.saturating_sub(root_size),
            sellers,
        });
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in train.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut draw_rng = rng_for(derive_seed(seed, "split-draw", 0));
    for members in &mut by_class {
        members.shuffle(&mut draw_rng);
    }
    let available: Vec<usize> = by_class.iter().map(Vec::len).collect();

    // Buyer root composition.
    let root_weights: Vec<f64> = match params.bias {
        BuyerBias::Unbiased => available.iter().map(|&c| c as f64).collect(),
        BuyerBias::Dirichlet { alpha } => {
            sample_dirichlet(alpha, k, &mut rng_for(derive_seed(seed, "split-buyer", 0)))
        }
    };
    let root_counts = apportion(&root_weights, root_size, &available);
    let mut buyer_indices = Vec::with_capacity(root_size);
    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(k);
    for (members, &take) in by_class.iter().zip(&root_counts) {
        buyer_indices.extend_from_slice(&members[..take]);
        pools.push(members[take..].to_vec());
    }
    let buyer_root = train.select(&buyer_indices);
    let buyer_dist = buyer_root.class_proportions();

    // Seller sizes: equal up to one sample.
    let pool_size: usize = pools.iter().map(Vec::len).sum();
    let sizes: Vec<usize> = (0..sellers)
        .map(|i| pool_size / sellers + usize::from(i < pool_size % sellers))
        .collect();

    // Perturbed target mixes q_i.
    let mut noise_rng = rng_for(derive_seed(seed, "split-noise", 0));
    let f = params.seller_noise;
    let targets: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&size| {
            let raw: Vec<f64> = buyer_dist
                .iter()
                .map(|&p| {
                    let u = if f > 0.0 { noise_rng.random_range(-f..f) } else { 0.0 };
                    (p * (1.0 + u)).max(MIN_CLASS_WEIGHT)
                })
                .collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|w| w / total * size as f64).collect()
        })
        .collect();
    let pool_counts: Vec<usize> = pools.iter().map(Vec::len).collect();
    let targets = sinkhorn(targets, &sizes, &pool_counts);

    // Rounding against remaining pool capacity: each count is the floor or
    // ceiling of its target, and carried rounding error picks which classes
    // round up.
    let mut remaining = pool_counts.clone();
    let mut carry = vec![0.0; k];
    let mut cursor = vec![0usize; k];
    let mut seller_indices = Vec::with_capacity(sellers);
    for (row, &size) in targets.iter().zip(&sizes) {
        let quota = round_row(row, size, &carry, &remaining);
        let mut idx = Vec::with_capacity(size);
        for c in 0..k {
            carry[c] += row[c] - quota[c] as f64;
            remaining[c] -= quota[c];
            idx.extend_from_slice(&pools[c][cursor[c]..cursor[c] + quota[c]]);
            cursor[c] += quota[c];
        }
        seller_indices.push(idx);
    }

    let seller_sets: Vec<Dataset> = seller_indices.iter().map(|idx| train.select(idx)).collect();
    let class_proportions = seller_sets.iter().map(Dataset::class_proportions).collect();

    let test_triggered = match trigger {
        Some(trigger) => {
            let eligible: Vec<usize> = (0..test.len())
                .filter(|&i| test.labels()[i] != trigger.target_label())
                .collect();
            let mut triggered = test.select(&eligible);
            for i in 0..triggered.len() {
                let mut s = triggered.sample(i);
                trigger.stamp(&mut s.features);
                triggered.set_sample(i, &s);
            }
            triggered
        }
        None => test.empty_like(),
    };

    Ok(Partition {
        buyer_root,
        seller_sets,
        test_clean: test.clone(),
        test_triggered,
        class_proportions,
        buyer_indices,
        seller_indices,
    })
}

/// Integer row summing to `size` with each entry the floor or ceiling of its
/// target where capacity allows. Round-ups go to the largest
/// `fraction + carry`, ties to the lowest class.
fn round_row(target: &[f64], size: usize, carry: &[f64], capacity: &[usize]) -> Vec<usize> {
    let k = target.len();
    let mut quota: Vec<usize> = (0..k)
        .map(|c| (target[c].max(0.0).floor() as usize).min(capacity[c]))
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    let priority = |c: usize| target[c] - target[c].floor() + carry[c];
    order.sort_by(|&a, &b| priority(b).total_cmp(&priority(a)).then(a.cmp(&b)));
    let mut assigned: usize = quota.iter().sum();
    while assigned > size {
        let c = *order.iter().rev().find(|&&c| quota[c] > 0).expect("positive quota");
        quota[c] -= 1;
        assigned -= 1;
    }
    for &c in &order {
        if assigned == size {
            break;
        }
        if quota[c] < capacity[c] && (quota[c] as f64) < target[c] {
            quota[c] += 1;
            assigned += 1;
        }
    }
    while assigned < size {
        let c = *order.iter().find(|&&c| quota[c] < capacity[c]).expect("capacity covers sizes");
        quota[c] += 1;
        assigned += 1;
    }
    quota
}

/// Class proportions from a symmetric Dirichlet via normalized Gamma draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Integer allocation of `total` proportional to `weights` under per-entry caps.
///
/// Entries whose proportional share exceeds their cap are pinned at the cap
/// and the rest is re-apportioned among the others (uniformly if their
/// weights are all zero). Remainders go to the largest fractional parts,
/// ties to the lowest index. Requires `sum(caps) >= total`.
pub fn apportion(weights: &[f64], total: usize, caps: &[usize]) -> Vec<usize> {
    let k = weights.len();
    debug_assert_eq!(k, caps.len());
    debug_assert!(caps.iter().sum::<usize>() >= total);
    let mut alloc = vec![0usize; k];
    let mut active: Vec<bool> = caps.iter().map(|&c| c > 0).collect();
    let mut remaining = total;

    while remaining > 0 {
        let mut w: Vec<f64> = (0..k)
            .map(|c| if active[c] { weights[c].max(0.0) } else { 0.0 })
            .collect();
        let mut w_sum: f64 = w.iter().sum();
        if w_sum <= 0.0 {
            for c in 0..k {
                w[c] = if active[c] { 1.0 } else { 0.0 };
            }
            w_sum = w.iter().sum();
        }
        let shares: Vec<f64> = w.iter().map(|wc| remaining as f64 * wc / w_sum).collect();

        let mut pinned = false;
        for c in 0..k {
            if active[c] && shares[c] >= (caps[c] - alloc[c]) as f64 {
                remaining -= caps[c] - alloc[c];
                alloc[c] = caps[c];
                active[c] = false;
                pinned = true;
            }
        }
        if pinned {
            continue;
        }

        let floors: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        for c in 0..k {
            alloc[c] += floors[c];
        }
        let mut leftover = remaining - floors.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..k).filter(|&c| active[c]).collect();
        order.sort_by(|&a, &b| {
            let fa = shares[a] - shares[a].floor();
            let fb = shares[b] - shares[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        while leftover > 0 {
            let before = leftover;
            for &c in &order {
                if leftover == 0 {
                    break;
                }
                if alloc[c] < caps[c] {
                    alloc[c] += 1;
                    leftover -= 1;
                }
            }
            assert!(leftover < before, "caps cannot absorb the allocation");
        }
        remaining = 0;
    }
    alloc
}

/// Scale `t` so rows sum to `row_sums` and columns to `col_sums`.
fn sinkhorn(mut t: Vec<Vec<f64>>, row_sums: &[usize], col_sums: &[usize]) -> Vec<Vec<f64>> {
    let k = col_sums.len();
    for row in &mut t {
        for c in 0..k {
            if col_sums[c] == 0 {
                row[c] = 0.0;
            }
        }
    }
    for _ in 0..SINKHORN_MAX_ITERS {
        for c in 0..k {
            let s: f64 = t.iter().map(|r| r[c]).sum();
            if s > 0.0 {
                let scale = col_sums[c] as f64 / s;
                t.iter_mut().for_each(|r| r[c] *= scale);
            }
        }
        for (row, &target) in t.iter_mut().zip(row_sums) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                let scale = target as f64 / s;
                row.iter_mut().for_each(|v| *v *= scale);
            }
        }
        let worst = (0..k)
            .map(|c| (t.iter().map(|r| r[c]).sum::<f64>() - col_sums[c] as f64).abs())
            .fold(0.0, f64::max);
        if worst < SINKHORN_TOL {
            break;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};
    use std::collections::HashSet;

    fn params(n: usize, f: f64, bias: BuyerBias) -> SplitParams {
        SplitParams {
            num_sellers: n,
            buyer_root_fraction: 0.02,
            bias,
            seller_noise: f,
        }
    }

    #[test]
    fn test_apportion_basics() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10, &[10, 10, 10]), vec![4, 3, 3]);
        assert_eq!(apportion(&[0.9, 0.1], 10, &[3, 100]), vec![3, 7]);
        assert_eq!(apportion(&[0.0, 0.0], 4, &[1, 5]), vec![1, 3]);
        assert_eq!(apportion(&[1.0, 2.0], 0, &[5, 5]), vec![0, 0]);
        assert_eq!(apportion(&[1.0, 1.0], 6, &[0, 6]), vec![0, 6]);
    }

    #[test]
    fn test_root_size_disjoint_and_conserved() {
        let data = make_synthetic(&SyntheticSpec::new(3, 8, 3000), 4).unwrap();
        let p = split_market(&data, &data, &params(30, 0.3, BuyerBias::Unbiased), None, 9).unwrap();
        assert_eq!(p.buyer_root.len(), 60);
        let mut seen: HashSet<usize> = p.buyer_indices.iter().copied().collect();
        for idx in &p.seller_indices {
            assert!(!idx.is_empty());
            for &i in idx {
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
        assert_eq!(seen.len(), data.len());
        let sizes: Vec<usize> = p.seller_sets.iter().map(Dataset::len).collect();
        assert!(*sizes.iter().max().unwrap() - *sizes.iter().min().unwrap() <= 1);
        assert!(p.test_triggered.is_empty());
    }

    #[test]
    fn test_zero_noise_matches_buyer_distribution() {
        // 1000 balanced train rows: root 20 (10/10), pool 980, 7 sellers of 140.
        let data = make_synthetic(&SyntheticSpec::new(2, 4, 1000), 1).unwrap();
        let p = split_market(&data, &data, &params(7, 0.0, BuyerBias::Unbiased), None, 2).unwrap();
        let pb = p.buyer_root.class_proportions();
        for set in &p.seller_sets {
            for (c, &count) in set.class_counts().iter().enumerate() {
                assert!((count as f64 - pb[c] * set.len() as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn test_zero_noise_uneven_sizes_within_one() {
        let data = make_synthetic(&SyntheticSpec::new(3, 8, 3000), 8).unwrap();
        let p = split_market(&data, &data, &params(30, 0.0, BuyerBias::Unbiased), None, 3).unwrap();
        let pb = p.buyer_root.class_proportions();
        assert_eq!(pb, vec![1.0 / 3.0; 3]);
        for set in &p.seller_sets {
            for (c, &count) in set.class_counts().iter().enumerate() {
                assert!((count as f64 - pb[c] * set.len() as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn test_biased_root_keeps_size() {
        let data = make_synthetic(&SyntheticSpec::new(4, 8, 4000), 5).unwrap();
        let p = split_market(
            &data,
            &data,
            &params(10, 0.3, BuyerBias::Dirichlet { alpha: 0.3 }),
            None,
            1,
        )
        .unwrap();
        assert_eq!(p.buyer_root.len(), 80);
        let total: usize = p.seller_sets.iter().map(Dataset::len).sum();
        assert_eq!(total + 80, 4000);
    }

    #[test]
    fn test_buyer_fraction_on_60k() {
        assert_eq!((0.02f64 * 60000.0).round() as usize, 1200);
    }

    #[test]
    fn test_large_noise_never_overdraws() {
        let data = make_synthetic(&SyntheticSpec::new(5, 8, 2000), 2).unwrap();
        for f in [1.0, 10.0] {
            let p = split_market(&data, &data, &params(30, f, BuyerBias::Unbiased), None, 3)
                .unwrap();
            let total: usize = p.seller_sets.iter().map(Dataset::len).sum();
            assert_eq!(total + p.buyer_root.len(), 2000);
            assert!(p.seller_sets.iter().all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn test_pool_exhausted() {
        let data = make_synthetic(&SyntheticSpec::new(2, 2, 20), 2).unwrap();
        assert!(matches!(
            split_market(&data, &data, &params(25, 0.3, BuyerBias::Unbiased), None, 0),
            Err(DataError::PoolExhausted { .. })
        ));
    }

    #[test]
    fn test_deterministic() {
        let data = make_synthetic(&SyntheticSpec::new(3, 8, 1500), 4).unwrap();
        let pr = params(12, 0.3, BuyerBias::Dirichlet { alpha: 0.3 });
        let a = split_market(&data, &data, &pr, None, 77).unwrap();
        let b = split_market(&data, &data, &pr, None, 77).unwrap();
        assert_eq!(a.seller_indices, b.seller_indices);
        assert_eq!(a.buyer_indices, b.buyer_indices);
    }

    #[test]
    fn test_dirichlet_concentration_monte_carlo() {
        let mut above = 0;
        for s in 0..1000u64 {
            let p = sample_dirichlet(0.3, 10, &mut rng_for(derive_seed(42, "dirichlet", s)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if p.iter().copied().fold(0.0, f64::max) > 0.1 {
                above += 1;
            }
        }
        assert!(above >= 950, "{above}");
    }
}
