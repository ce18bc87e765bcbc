//! Two-cluster partitioning used by the selection rules.

use crate::model::distance;

const LLOYD_MAX_ITERS: usize = 100;

/// Optimal 1-D 2-means over `(value, id)` pairs.
///
/// Returns a membership flag per input (true = upper cluster), or `None` when
/// all values are identical. In one dimension an optimal 2-partition is a
/// split of the sorted values, so every split point is scored by its
/// within-group sum of squared deviations. Values are sorted by `(value, id)`
/// and the first minimal split wins, which makes the result independent of
/// input order.
pub fn two_means_1d(points: &[(f64, usize)]) -> Option<Vec<bool>> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.cmp(&points[b].1))
    });
    let sorted: Vec<f64> = order.iter().map(|&i| points[i].0).collect();
    if sorted[0] == sorted[n - 1] {
        return None;
    }

    let sse = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
    };
    let mut best_split = 1;
    let mut best_cost = f64::INFINITY;
    for split in 1..n {
        let cost = sse(&sorted[..split]) + sse(&sorted[split..]);
        if cost < best_cost {
            best_cost = cost;
            best_split = split;
        }
    }
    let mut upper = vec![false; n];
    for &i in &order[best_split..] {
        upper[i] = true;
    }
    Some(upper)
}

/// Euclidean 2-means with deterministic farthest-point seeding.
///
/// Returns a cluster label (0 or 1) per point; all zeros when the points are
/// identical. Seeds are the point farthest from the overall mean and the point
/// farthest from that one (ties to the lowest index); Lloyd iterations run
/// until assignments stop changing. Distance ties go to cluster 0.
pub fn two_means(points: &[&[f64]]) -> Vec<usize> {
    let n = points.len();
    if n < 2 {
        return vec![0; n];
    }
    let dim = points[0].len();
    let mean = centroid(points, &vec![true; n], dim);
    let farthest_from = |c: &[f64]| {
        let mut best = 0;
        let mut best_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = distance(p, c);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        (best, best_d)
    };
    let (a, _) = farthest_from(&mean);
    let (b, spread) = farthest_from(points[a]);
    if spread == 0.0 {
        return vec![0; n];
    }

    let mut centers = [points[a].to_vec(), points[b].to_vec()];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITERS {
        let next: Vec<usize> = points
            .iter()
            .map(|p| usize::from(distance(p, &centers[1]) < distance(p, &centers[0])))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            if members.iter().any(|&m| m) {
                *center = centroid(points, &members, dim);
            }
        }
    }
    labels
}

pub(crate) fn centroid(points: &[&[f64]], members: &[bool], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    let mut count = 0usize;
    for (p, &m) in points.iter().zip(members) {
        if m {
            count += 1;
            for (ci, x) in c.iter_mut().zip(p.iter()) {
                *ci += x;
            }
        }
    }
    if count > 0 {
        c.iter_mut().for_each(|v| *v /= count as f64);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive search over every nonempty proper subset.
    fn brute_force_1d(values: &[f64]) -> (f64, Vec<bool>) {
        let n = values.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let groups: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let cost: f64 = [true, false]
                .iter()
                .map(|&g| {
                    let xs: Vec<f64> = (0..n).filter(|&i| groups[i] == g).map(|i| values[i]).collect();
                    let m = xs.iter().sum::<f64>() / xs.len() as f64;
                    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
                })
                .sum();
            if cost < best.0 - 1e-15 {
                best = (cost, groups);
            }
        }
        best
    }

    fn cost_of(values: &[f64], upper: &[bool]) -> f64 {
        [true, false]
            .iter()
            .map(|&g| {
                let xs: Vec<f64> = (0..values.len()).filter(|&i| upper[i] == g).map(|i| values[i]).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn test_example_scores() {
        let upper = two_means_1d(&[(0.9, 0), (0.85, 1), (-0.8, 2)]).unwrap();
        assert_eq!(upper, vec![true, true, false]);
        let (_, brute) = brute_force_1d(&[0.9, 0.85, -0.8]);
        assert!(brute == upper || brute.iter().map(|b| !b).collect::<Vec<_>>() == upper);
    }

    #[test]
    fn test_identical_is_degenerate() {
        assert_eq!(two_means_1d(&[(0.3, 0), (0.3, 1), (0.3, 2)]), None);
        assert_eq!(two_means_1d(&[(0.3, 0)]), None);
    }

    #[test]
    fn test_matches_brute_force_cost() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for trial in 0..300 {
            let n = 2 + trial % 8;
            let values: Vec<f64> = (0..n).map(|_| next()).collect();
            let pts: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
            let upper = two_means_1d(&pts).unwrap();
            let (best, _) = brute_force_1d(&values);
            assert!((cost_of(&values, &upper) - best).abs() < 1e-12);
        }
    }

    #[test]
    fn test_euclidean_two_clusters() {
        let pts: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![5.0, 5.0],
            vec![0.0, 0.1],
            vec![5.1, 5.0],
        ];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let labels = two_means(&refs);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[0], labels[3]);
        assert_eq!(labels[2], labels[4]);
        assert_ne!(labels[0], labels[2]);
    }

    #[test]
    fn test_euclidean_identical_points() {
        let pts = vec![vec![0.5, 0.5]; 4];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        assert_eq!(two_means(&refs), vec![0; 4]);
    }
}
