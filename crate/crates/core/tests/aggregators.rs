use gradmarket_core::aggregate::{
    build_aggregator, fedavg, fltrust, train_mask, AggregationResult, MartFl, RoundContext, SkyMask, Submission,
};
use gradmarket_core::aggregate::Aggregator;
use gradmarket_core::config::{rng_for, AggregatorConfig, AggregatorKind, ReferenceUpdate};
use gradmarket_core::data::{make_synthetic, Dataset, SyntheticSpec};
use gradmarket_core::model::{GradientVector, ModelParams, Architecture};
use proptest::prelude::*;
use rand::Rng;

fn gv(v: &[f64]) -> GradientVector {
    GradientVector::new(v.to_vec()).unwrap()
}

fn sub(id: usize, v: &[f64], n: usize) -> Submission {
    Submission { seller_id: id, delta: gv(v), num_samples: n }
}

struct Fixture {
    global: ModelParams,
    root: Dataset,
}

impl Fixture {
    /// Logreg on 2 features, 2 classes: 6 parameters.
    fn new() -> Self {
        let root = make_synthetic(&SyntheticSpec::new(2, 2, 40), 1).unwrap();
        Self { global: ModelParams::zeros(Architecture::Logreg, 2, 2), root }
    }

    fn ctx<'a>(&'a self, reference: &'a GradientVector) -> RoundContext<'a> {
        RoundContext { global: &self.global, buyer_reference: reference, buyer_root: &self.root }
    }
}

fn random_subs<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Vec<Submission> {
    (0..count)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            sub(i, &v, rng.random_range(1..50))
        })
        .collect()
}

/// Rebuild the aggregate from (selected, weights); fltrust rescales to the root norm.
fn reconstruct(subs: &[Submission], result: &AggregationResult, rescale_to: Option<f64>) -> Vec<f64> {
    let dim = subs[0].delta.len();
    let mut out = vec![0.0; dim];
    for (id, w) in result.selected.iter().zip(&result.weights) {
        let s = subs.iter().find(|s| s.seller_id == *id).unwrap();
        let scale = rescale_to.map_or(1.0, |n| n / s.delta.norm());
        for (o, x) in out.iter_mut().zip(s.delta.as_slice()) {
            *o += w * scale * x;
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn test_fedavg_examples() {
    let r = fedavg(&[sub(0, &[1.0, 0.0], 10), sub(1, &[0.0, 1.0], 10)]).unwrap();
    assert_eq!(r.aggregated.as_slice(), &[0.5, 0.5]);
    let r = fedavg(&[sub(3, &[2.0, -1.0], 7)]).unwrap();
    assert_eq!(r.aggregated.as_slice(), &[2.0, -1.0]);
    let r = fedavg(&[sub(0, &[4.0, 0.0], 100), sub(1, &[0.0, 4.0], 300)]).unwrap();
    assert_eq!(r.aggregated.as_slice(), &[1.0, 3.0]);
    assert!(fedavg(&[]).is_err());
}

#[test]
fn test_fltrust_examples() {
    let gb = gv(&[1.0, 2.0]);
    let r = fltrust(&[sub(0, &[-1.0, -2.0], 1), sub(1, &[1.0, 0.0], 1)], &gb).unwrap();
    assert_eq!(r.scores[0], 0.0);
    assert_eq!(r.selected, vec![1]);

    let r = fltrust(&[sub(0, &[2.0, 4.0], 1)], &gb).unwrap();
    assert!(max_abs_diff(r.aggregated.as_slice(), gb.as_slice()) < 1e-15);

    let r = fltrust(&[sub(0, &[1.0, 2.0], 1), sub(1, &[-1.0, -2.0], 1)], &gb).unwrap();
    assert_eq!(r.selected, vec![0]);
    assert_eq!(r.aggregated.as_slice(), gb.as_slice());

    assert!(fltrust(&[sub(0, &[1.0, 0.0], 1)], &gv(&[0.0, 0.0])).is_err());
}

#[test]
fn test_fltrust_zero_norm_submission() {
    let r = fltrust(&[sub(0, &[0.0, 0.0], 1), sub(1, &[1.0, 1.0], 1)], &gv(&[1.0, 1.0])).unwrap();
    assert_eq!(r.selected, vec![1]);
}

#[test]
fn test_martfl_examples() {
    let f = Fixture::new();
    let reference = gv(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    // Cosines 0.9, 0.85, -0.8 against the reference.
    let at = |c: f64| vec![c, (1.0 - c * c).sqrt(), 0.0, 0.0, 0.0, 0.0];
    let subs = vec![sub(0, &at(0.9), 1), sub(1, &at(0.85), 1), sub(2, &at(-0.8), 1)];
    let mut m = MartFl::new(ReferenceUpdate::Aggregate);
    let r = m.aggregate(&subs, &f.ctx(&reference)).unwrap();
    assert_eq!(r.selected, vec![0, 1]);

    let same = vec![sub(0, &at(0.5), 1), sub(1, &at(0.5), 2), sub(2, &at(0.5), 3)];
    let mut m = MartFl::new(ReferenceUpdate::Aggregate);
    let r = m.aggregate(&same, &f.ctx(&reference)).unwrap();
    assert_eq!(r.selected, vec![0, 1, 2]);

    let one = vec![sub(4, &at(0.3), 1)];
    let mut m = MartFl::new(ReferenceUpdate::Aggregate);
    let r = m.aggregate(&one, &f.ctx(&reference)).unwrap();
    assert_eq!(r.selected, vec![4]);
    assert_eq!(r.aggregated, one[0].delta);
    assert_eq!(m.reference(), Some(&one[0].delta));
}

#[test]
fn test_martfl_medoid_reference_is_a_submission() {
    let f = Fixture::new();
    let reference = gv(&[1.0, 0.2, 0.0, 0.0, 0.0, 0.0]);
    let mut rng = rng_for(3);
    let subs = random_subs(&mut rng, 6, 6);
    let mut m = MartFl::new(ReferenceUpdate::Medoid);
    let r = m.aggregate(&subs, &f.ctx(&reference)).unwrap();
    let next = m.reference().unwrap();
    assert!(r.selected.iter().any(|id| &subs[*id].delta == next));
}

#[test]
fn test_skymask_identical_and_untrained() {
    let f = Fixture::new();
    let reference = gv(&[0.0; 6]);
    let d = [0.3, -0.1, 0.2, 0.0, 0.1, -0.2];
    let mut s = SkyMask::new(20, 0.1);
    let r = s.aggregate(&[sub(0, &d, 1), sub(1, &d, 1)], &f.ctx(&reference)).unwrap();
    assert_eq!(r.selected, vec![0, 1]);

    let mut rng = rng_for(9);
    let subs = random_subs(&mut rng, 5, 6);
    let mask = train_mask(&f.global, subs[0].delta.as_slice(), &f.root, 0, 0.1).unwrap();
    assert!(mask.iter().all(|&m| m == 0.5));
    let mut s = SkyMask::new(0, 0.1);
    let r = s.aggregate(&subs, &f.ctx(&reference)).unwrap();
    assert_eq!(r.selected, vec![0, 1, 2, 3, 4]);
}

#[test]
fn test_skymask_empty_root_is_error() {
    let f = Fixture::new();
    let empty = f.root.empty_like();
    let reference = gv(&[0.0; 6]);
    let ctx = RoundContext { global: &f.global, buyer_reference: &reference, buyer_root: &empty };
    assert!(SkyMask::new(5, 0.1).aggregate(&[sub(0, &[0.1; 6], 1)], &ctx).is_err());
}

#[test]
fn test_reconstruction_all_aggregators() {
    let f = Fixture::new();
    let mut rng = rng_for(21);
    for trial in 0..40 {
        let subs = random_subs(&mut rng, 2 + trial % 7, 6);
        let reference = GradientVector::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for kind in [AggregatorKind::Fedavg, AggregatorKind::Fltrust, AggregatorKind::Martfl, AggregatorKind::Skymask] {
            let mut agg = build_aggregator(&AggregatorConfig { kind, mask_steps: 5, ..Default::default() });
            let r = agg.aggregate(&subs, &f.ctx(&reference)).unwrap();
            let rescale = (kind == AggregatorKind::Fltrust).then(|| reference.norm());
            let rebuilt = reconstruct(&subs, &r, rescale);
            assert!(max_abs_diff(&rebuilt, r.aggregated.as_slice()) < 1e-10, "{kind:?}");
            assert_eq!(r.selected.len(), r.weights.len());
            assert_eq!(r.scores.len(), subs.len());
            assert!(r.weights.iter().all(|&w| w >= 0.0));
            if !r.selected.is_empty() {
                assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            } else {
                assert!(r.aggregated.as_slice().iter().all(|&v| v == 0.0));
            }
        }
    }
}

proptest! {
    #[test]
    fn prop_fltrust_scale_invariant(
        vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..8),
        root in prop::collection::vec(-1.0f64..1.0, 4),
        which in 0usize..8,
        c in 0.01f64..100.0,
    ) {
        let gb = gv(&root);
        prop_assume!(gb.norm() > 1e-6);
        let subs: Vec<Submission> = vecs.iter().enumerate().map(|(i, v)| sub(i, v, 1)).collect();
        let mut scaled = subs.clone();
        let k = which % scaled.len();
        scaled[k].delta = gv(&scaled[k].delta.as_slice().iter().map(|x| x * c).collect::<Vec<_>>());
        let a = fltrust(&subs, &gb).unwrap();
        let b = fltrust(&scaled, &gb).unwrap();
        prop_assert_eq!(&a.selected, &b.selected);
        prop_assert!(max_abs_diff(&a.scores, &b.scores) < 1e-10);
        prop_assert!(max_abs_diff(a.aggregated.as_slice(), b.aggregated.as_slice()) < 1e-10);
    }

    #[test]
    fn prop_martfl_permutation_invariant(
        vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..9),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let f = Fixture::new();
        let reference = gv(&[0.5, -0.2, 0.1, 0.3, 0.0, 0.4]);
        let subs: Vec<Submission> = vecs.iter().enumerate().map(|(i, v)| sub(i * 3 + 1, v, 1)).collect();
        let mut shuffled = subs.clone();
        shuffled.shuffle(&mut rng_for(seed));
        let a = MartFl::new(ReferenceUpdate::Aggregate).aggregate(&subs, &f.ctx(&reference)).unwrap();
        let b = MartFl::new(ReferenceUpdate::Aggregate).aggregate(&shuffled, &f.ctx(&reference)).unwrap();
        prop_assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn prop_martfl_tied_scores_select_all(n in 1usize..9, scale in prop::collection::vec(0.1f64..10.0, 9)) {
        let f = Fixture::new();
        let reference = gv(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let subs: Vec<Submission> = (0..n).map(|i| sub(i, &[scale[i], scale[i], 0.0, 0.0, 0.0, 0.0], 1)).collect();
        let r = MartFl::new(ReferenceUpdate::Aggregate).aggregate(&subs, &f.ctx(&reference)).unwrap();
        prop_assert_eq!(r.selected, (0..n).collect::<Vec<_>>());
    }
}
