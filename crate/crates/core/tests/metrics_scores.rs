mod common;

use attrsel::image::Image;
use attrsel::metrics::{deletion_curve, insertion_curve, trapezoid_auc, MetricCurve};
use attrsel::partition::{grid_candidates, SaliencyMap};
use attrsel::scores::{clue, collaboration, collaboration_obj, consistency, CoverageDetector, DetectionQuery, ElementFeatures};
use proptest::prelude::*;

#[test]
fn trapezoid_hand_cases() {
    assert_eq!(trapezoid_auc(&[0.0, 0.5, 1.0], &[0.0, 1.0, 1.0]).unwrap(), 0.75);
    assert_eq!(trapezoid_auc(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(trapezoid_auc(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.5);
    assert!(trapezoid_auc(&[0.0, 1.0], &[0.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_curves_integrate_exactly(a in -4i32..4, b in -4i32..4, steps in 1usize..64) {
        // dyadic slopes and grids keep every term exact
        let n = steps.next_power_of_two();
        let ys: Vec<f64> = (0..=n).map(|t| f64::from(a) + f64::from(b) * t as f64 / n as f64).collect();
        let c = MetricCurve::new(ys).unwrap();
        prop_assert_eq!(c.auc, f64::from(a) + f64::from(b) / 2.0);
        prop_assert_eq!(c.xs[0], 0.0);
        prop_assert_eq!(*c.xs.last().unwrap(), 1.0);
    }

    #[test]
    fn insertion_is_deletion_of_the_reverse(seed in 0u64..64, perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
        let toy = common::toy_pipeline();
        let image = &toy.images[(seed % 16) as usize];
        let sal = SaliencyMap::new(8, 8, common::random_image(seed, 1, 8, 8).data().to_vec()).unwrap();
        let cs = grid_candidates(image, &sal, 4, 8, &toy.stats.fill_value).unwrap();
        let class = toy.model.predict(image).unwrap();
        let ins = insertion_curve(&toy.model, &cs, &perm, class).unwrap();
        let rev: Vec<usize> = perm.iter().rev().cloned().collect();
        let del = deletion_curve(&toy.model, &cs, &rev, class).unwrap();
        let n = perm.len();
        for t in 0..=n {
            prop_assert_eq!(ins.ys[t], del.ys[n - t]);
        }
        prop_assert_eq!(ins.ys[n], toy.model.probabilities(image).unwrap()[class]);
        prop_assert_eq!(del.ys[0], ins.ys[n]);
    }

    #[test]
    fn attribution_scores_lie_in_unit_range(seed in 0u64..64, pick in prop::collection::vec(any::<bool>(), 8)) {
        let toy = common::toy_pipeline();
        let image = &toy.images[(seed % 16) as usize];
        let sal = SaliencyMap::new(8, 8, common::random_image(seed, 1, 8, 8).data().to_vec()).unwrap();
        let cs = grid_candidates(image, &sal, 4, 8, &toy.stats.fill_value).unwrap();
        let subset: Vec<usize> = (0..8).filter(|&i| pick[i]).collect();
        for class in 0..2 {
            let colla = collaboration(&toy.model, &cs, &subset, class).unwrap();
            let p = toy.model.probabilities(&cs.compose_complement(&subset).unwrap()).unwrap()[class];
            prop_assert!((0.0..=1.0).contains(&colla));
            prop_assert!((colla + p - 1.0).abs() <= 1e-15);
            let proto = toy.stats.prototype(class).unwrap();
            prop_assert!((0.0..=1.0).contains(&consistency(&toy.model, &cs, &subset, proto).unwrap()));
        }
        let eff = ElementFeatures::compute(&toy.model, &cs).unwrap().effectiveness(&subset).unwrap();
        prop_assert!(eff >= 0.0);
    }
}

#[test]
fn clue_is_monotone_for_a_coverage_detector() {
    let img = Image::new(1, 12, 12, vec![0.8; 144]).unwrap();
    let sal = SaliencyMap::new(12, 12, common::random_image(2, 1, 12, 12).data().to_vec()).unwrap();
    let cs = grid_candidates(&img, &sal, 6, 6, &[0.0]).unwrap();
    let det = CoverageDetector { fill: vec![0.0] };
    let q = DetectionQuery {
        x: 2,
        y: 3,
        w: 7,
        h: 6,
        class: 0,
    };
    let n = cs.len();
    let value = |mask: u32| {
        let s: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        (clue(&det, &cs, &s, &q).unwrap(), collaboration_obj(&det, &cs, &s, &q).unwrap())
    };
    for a in 0u32..1 << n {
        let (ca, oa) = value(a);
        assert!((0.0..=1.0).contains(&ca) && (0.0..=1.0).contains(&oa));
        for x in 0..n {
            let (cb, ob) = value(a | 1 << x);
            assert!(cb >= ca && ob >= oa);
        }
    }
    assert_eq!(value((1 << n) - 1).0, 1.0);
    assert_eq!(value(0).0, 0.0);
}
