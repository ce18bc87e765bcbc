//! Brute-force reference implementations of the marketplace metrics.

use gradmarket_core::engine::RunTrace;
use gradmarket_core::metrics::{self, Convergence};

fn is_malicious(trace: &RunTrace, id: usize) -> bool {
    trace.roles.iter().any(|r| r.seller_id == id && r.is_malicious())
}

fn is_selected(trace: &RunTrace, t: usize, id: usize) -> bool {
    trace.ledgers[t].submissions.iter().any(|s| s.seller_id == id && s.paid)
}

pub fn coc(acc: &[f64], cost: &[usize], milestone: f64) -> Option<(usize, usize)> {
    let mut total = 0;
    for t in 0..acc.len() {
        total += cost[t];
        if acc[t] >= milestone {
            return Some((t + 1, total));
        }
    }
    None
}

pub fn msr_fraction(trace: &RunTrace) -> Option<f64> {
    let (mut bad, mut all) = (0.0, 0.0);
    for t in 0..trace.ledgers.len() {
        for id in 0..trace.num_sellers {
            if is_selected(trace, t, id) {
                all += 1.0;
                if is_malicious(trace, id) {
                    bad += 1.0;
                }
            }
        }
    }
    (all > 0.0).then(|| bad / all)
}

pub fn group_rate(trace: &RunTrace, malicious: bool) -> Option<f64> {
    let group: Vec<usize> = (0..trace.num_sellers).filter(|&i| is_malicious(trace, i) == malicious).collect();
    if group.is_empty() || trace.ledgers.is_empty() {
        return None;
    }
    let mut per_seller = 0.0;
    for &id in &group {
        let hits = (0..trace.ledgers.len()).filter(|&t| is_selected(trace, t, id)).count();
        per_seller += hits as f64 / trace.ledgers.len() as f64;
    }
    Some(per_seller / group.len() as f64)
}

/// Pearson r from raw sums.
pub fn pearson(trace: &RunTrace) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = trace
        .ledgers
        .iter()
        .flat_map(|l| l.submissions.iter().map(|s| (s.divergence, if s.paid { 1.0 } else { 0.0 })))
        .collect();
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sy: f64 = pairs.iter().map(|p| p.1).sum();
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let syy: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    let all_same_x = pairs.iter().all(|p| p.0 == pairs[0].0);
    let all_same_y = pairs.iter().all(|p| p.1 == pairs[0].1);
    if all_same_x || all_same_y {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt()))
}

pub fn payments(trace: &RunTrace) -> Vec<u64> {
    (0..trace.num_sellers)
        .map(|id| (0..trace.ledgers.len()).filter(|&t| is_selected(trace, t, id)).count() as u64)
        .collect()
}

pub fn gini(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    if x.is_empty() || mu == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in x {
        for b in x {
            sum += (a - b).abs();
        }
    }
    sum / (2.0 * n * n * mu)
}

pub fn benign_gini(trace: &RunTrace) -> f64 {
    let pay = payments(trace);
    let benign: Vec<f64> = (0..trace.num_sellers).filter(|&i| !is_malicious(trace, i)).map(|i| pay[i] as f64).collect();
    gini(&benign)
}

pub fn entropy(trace: &RunTrace) -> Option<(f64, f64)> {
    let counts: Vec<f64> = payments(trace).iter().map(|&c| c as f64).collect();
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mut h = 0.0;
    for c in counts {
        if c > 0.0 {
            h -= (c / total) * (c / total).log2();
        }
    }
    let max = (trace.num_sellers as f64).log2();
    Some((h, if max > 0.0 { h / max } else { 0.0 }))
}

pub fn stability(trace: &RunTrace) -> Option<f64> {
    let t = trace.ledgers.len();
    if t < 2 {
        return None;
    }
    let mask = |r: usize| -> u64 {
        (0..trace.num_sellers).filter(|&i| is_selected(trace, r, i)).map(|i| 1u64 << i).sum()
    };
    let mut sum = 0.0;
    for r in 0..t - 1 {
        let (a, b) = (mask(r), mask(r + 1));
        sum += if a | b == 0 { 1.0 } else { (a & b).count_ones() as f64 / (a | b).count_ones() as f64 };
    }
    Some(sum / (t - 1) as f64)
}

pub fn composition(trace: &RunTrace) -> Option<(f64, f64)> {
    let t = trace.ledgers.len();
    if t == 0 {
        return None;
    }
    let (mut b, mut m) = (0.0, 0.0);
    for r in 0..t {
        for id in 0..trace.num_sellers {
            if is_selected(trace, r, id) {
                if is_malicious(trace, id) {
                    m += 1.0;
                } else {
                    b += 1.0;
                }
            }
        }
    }
    Some((b / t as f64, m / t as f64))
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

/// Compare every metric against its oracle; returns the first mismatch.
pub fn compare(trace: &RunTrace, tol: f64) -> Result<(), String> {
    let check = |name: &str, ok: bool| if ok { Ok(()) } else { Err(format!("{name} mismatch")) };
    let acc: Vec<f64> = trace.ledgers.iter().map(|l| l.accuracy).collect();
    let cost: Vec<usize> = trace.ledgers.iter().map(|l| l.cost).collect();
    for m in [0.0, 0.3, 0.5, 0.7, 0.9, 1.1] {
        let got = metrics::cost_of_convergence(&acc, &cost, m).map(|Convergence { rounds, gradients }| (rounds, gradients));
        check("cost_of_convergence", got == coc(&acc, &cost, m))?;
    }
    check("msr_fraction", close(metrics::malicious_selection_rate(trace), msr_fraction(trace), tol))?;
    let ids = |malicious: bool| -> Vec<usize> {
        trace.roles.iter().filter(|r| r.is_malicious() == malicious).map(|r| r.seller_id).collect()
    };
    check("bsr", close(metrics::per_seller_selection_rate(trace, &ids(false)), group_rate(trace, false), tol))?;
    check("msr_rate", close(metrics::per_seller_selection_rate(trace, &ids(true)), group_rate(trace, true), tol))?;
    check("pearson", close(metrics::divergence_selection_correlation(trace), pearson(trace), tol))?;
    check("settle", gradmarket_core::engine::settle(trace) == payments(trace))?;
    let pay = payments(trace);
    let benign: Vec<f64> = ids(false).iter().map(|&i| pay[i] as f64).collect();
    check("gini", (metrics::payment_gini(&benign) - benign_gini(trace)).abs() <= tol)?;
    let (got, want) = (metrics::selection_diversity(trace), entropy(trace));
    check("entropy", close(got.map(|g| g.0), want.map(|w| w.0), tol) && close(got.map(|g| g.1), want.map(|w| w.1), tol))?;
    check("stability", close(metrics::selection_stability(trace), stability(trace), tol))?;
    let (got, want) = (metrics::cost_composition(trace), composition(trace));
    check("composition", close(got.map(|g| g.0), want.map(|w| w.0), tol) && close(got.map(|g| g.1), want.map(|w| w.1), tol))?;
    Ok(())
}
