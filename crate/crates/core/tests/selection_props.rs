mod common;

use attrsel::partition::{grid_candidates, SaliencyMap};
use attrsel::submodular::{
    all_subset_values, brute_force, greedy, lazy_greedy, submodularity_ratio, AttributionObjective, Coverage,
    Modular, ObjectiveWeights, SetObjective,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONE_MINUS_INV_E: f64 = 0.6321205588;

/// Best value over all subsets of size ≤ k, by direct enumeration.
fn optimum(obj: &dyn SetObjective, k: usize) -> f64 {
    let n = obj.len();
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize <= k)
        .map(|m| obj.evaluate(&(0..n).filter(|&i| m >> i & 1 == 1).collect::<Vec<_>>()).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn greedy_meets_the_approximation_bound() {
    for i in 0..50 {
        let c = Coverage::random(0, i, 10);
        let g = greedy(&c, 4).unwrap();
        let opt = optimum(&c, 4);
        let (best, value) = brute_force(&c, 4).unwrap();
        assert_eq!(value, opt);
        assert_eq!(c.evaluate(&best).unwrap(), opt);
        assert!(*g.objective_values.last().unwrap() >= ONE_MINUS_INV_E * opt, "instance {i}");
    }
}

#[test]
fn lazy_greedy_traces_equal_greedy() {
    for i in 0..50 {
        let c = Coverage::random(0, i, 10);
        for k in [1, 4, 10] {
            let g = greedy(&c, k).unwrap();
            let l = lazy_greedy(&c, k).unwrap();
            assert_eq!(l.order, g.order);
            assert_eq!(l.gains, g.gains);
            assert_eq!(l.objective_values, g.objective_values);
            assert_eq!(l.component_breakdown, g.component_breakdown);
            assert!(l.evaluations <= g.evaluations);
        }
    }
}

#[test]
fn modular_greedy_is_exact_top_k() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = r.random_range(1..16);
        // coarse values force ties
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64).collect();
        let k = r.random_range(1..=n);
        let mut expect: Vec<usize> = (0..n).collect();
        expect.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        expect.truncate(k);
        let m = Modular { weights };
        assert_eq!(greedy(&m, k).unwrap().order, expect);
        assert_eq!(lazy_greedy(&m, k).unwrap().order, expect);
    }
}

#[test]
fn coverage_is_monotone_submodular_and_modular_ratio_is_one() {
    for i in 0..5 {
        let rep = submodularity_ratio(&Coverage::random(3, i, 8), 0, 0).unwrap();
        assert_eq!(rep.monotonicity_violations, 0);
        assert!(rep.min_ratio.unwrap() >= 1.0);
    }
    let m = Modular {
        weights: vec![1.5, 0.25, 3.0, 2.0, 0.5],
    };
    let rep = submodularity_ratio(&m, 0, 0).unwrap();
    assert_eq!((rep.min_ratio, rep.mean_ratio), (Some(1.0), Some(1.0)));
    let sampled = submodularity_ratio(&m, 500, 9).unwrap();
    assert_eq!(sampled.triples, 500);
    assert_eq!(sampled.min_ratio, Some(1.0));
}

#[test]
fn subset_values_are_indexed_by_bitmask() {
    let c = Coverage::random(1, 2, 6);
    let values = all_subset_values(&c).unwrap();
    for (mask, v) in values.iter().enumerate() {
        let subset: Vec<usize> = (0..6).filter(|&i| mask >> i & 1 == 1).collect();
        assert_eq!(*v, c.evaluate(&subset).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn evaluation_ignores_listing_order(index in 0u64..1000, perm in Just((0..10).collect::<Vec<usize>>()).prop_shuffle(), len in 0usize..=10) {
        let c = Coverage::random(5, index, 10);
        let subset = &perm[..len];
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(c.evaluate(subset).unwrap(), c.evaluate(&sorted).unwrap());
    }

    #[test]
    fn traces_telescope(index in 0u64..1000, k in 1usize..=10) {
        let c = Coverage::random(6, index, 10);
        for t in [greedy(&c, k).unwrap(), lazy_greedy(&c, k).unwrap()] {
            prop_assert_eq!(t.order.len(), k);
            prop_assert!(t.telescoping_error() <= 1e-9);
            let mut prev = t.initial_value;
            for (g, v) in t.gains.iter().zip(&t.objective_values) {
                prop_assert!((prev + g - v).abs() <= 1e-9);
                prev = *v;
            }
        }
    }

    #[test]
    fn full_budget_is_a_permutation(weights in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let n = weights.len();
        let mut order = greedy(&Modular { weights }, n).unwrap().order;
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn attribution_objective_matches_recomputed_components() {
    let toy = common::toy_pipeline();
    let image = &toy.images[0];
    let class = toy.model.predict(image).unwrap();
    let sal = SaliencyMap::new(8, 8, common::random_image(4, 1, 8, 8).data().to_vec()).unwrap();
    let cs = grid_candidates(image, &sal, 6, 6, &toy.stats.fill_value).unwrap();
    let obj = AttributionObjective::new(&toy.model, &toy.stats, &cs, class, ObjectiveWeights::default()).unwrap();
    let subset = [1usize, 3, 4];

    let composed = cs.compose(&subset).unwrap();
    let ds = toy.stats.descriptors.as_ref().unwrap();
    let d = toy.stats.descriptor_for_class(&toy.model, &composed, class).unwrap();
    let k = d.values.len();
    let cov = DMatrix::from_fn(k, k, |i, j| ds.covariance()[i][j] + if i == j { ds.lambda() } else { 0.0 });
    let diff = DVector::from_fn(k, |i, _| d.values[i] - ds.mean()[i]);
    let raw = (diff.transpose() * cov.try_inverse().unwrap() * &diff)[(0, 0)].sqrt();
    let (lo, hi) = (toy.stats.norm_min.min(raw), toy.stats.norm_max.max(raw));
    let confidence = 1.0 - (raw - lo) / (hi - lo);

    let singles: Vec<Vec<f64>> = subset
        .iter()
        .map(|&e| toy.model.penultimate_feature(&cs.compose(&[e]).unwrap()).unwrap())
        .collect();
    let effectiveness: f64 = (0..3)
        .map(|i| (0..3).filter(|&j| j != i).map(|j| euclid(&singles[i], &singles[j])).fold(f64::INFINITY, f64::min))
        .sum();

    let feature = toy.model.penultimate_feature(&composed).unwrap();
    let proto = &toy.stats.prototype(class).unwrap().feature;
    let dot: f64 = feature.iter().zip(proto).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let consistency = (dot / (norm(&feature) * norm(proto)) + 1.0) / 2.0;

    let collaboration = 1.0 - softmax(&toy.model.logits(&cs.compose_complement(&subset).unwrap()).unwrap())[class];

    let (value, comps) = obj.evaluate_detailed(&[4, 1, 3]).unwrap();
    let expect = [confidence, effectiveness, consistency, collaboration];
    for (c, e) in comps.iter().zip(&expect) {
        assert!((c - e).abs() <= 1e-9, "{comps:?} vs {expect:?}");
    }
    assert!((value - expect.iter().sum::<f64>()).abs() <= 1e-9);
    assert_eq!(obj.evaluate(&[]).unwrap(), obj.evaluate_detailed(&[]).unwrap().1.iter().sum::<f64>());
    assert_eq!(obj.evaluate_detailed(&[]).unwrap().1[..2], [0.0, 0.0]);
}

#[test]
fn attribution_greedy_trace_telescopes() {
    let toy = common::toy_pipeline();
    let image = &toy.images[5];
    let class = toy.model.predict(image).unwrap();
    let sal = SaliencyMap::new(8, 8, common::random_image(9, 1, 8, 8).data().to_vec()).unwrap();
    let cs = grid_candidates(image, &sal, 4, 8, &toy.stats.fill_value).unwrap();
    let obj = AttributionObjective::new(&toy.model, &toy.stats, &cs, class, ObjectiveWeights::default()).unwrap();
    let g = greedy(&obj, 8).unwrap();
    assert!(g.telescoping_error() <= 1e-9);
    let report = submodularity_ratio(&obj, 0, 0).unwrap();
    assert!(report.triples > 0);
}
