mod common;

use attrsel::uncertainty::{
    compute_descriptor, confidence_score, modulation_factor, normalize_with_bounds, Descriptor,
    DescriptorStats, FeatureStats, PassContext, TrainStats, UncertaintyConfig, STATS_VERSION,
};
use proptest::prelude::*;

fn bare_stats(norm: Option<(f64, f64)>) -> TrainStats {
    let descriptors = norm.map(|_| DescriptorStats::new(vec![0.0], vec![vec![1.0]], 0.0).unwrap());
    let (norm_min, norm_max) = norm.unwrap_or((0.0, 0.0));
    TrainStats {
        format_version: STATS_VERSION,
        features: FeatureStats {
            centroid: vec![0.0],
            rho0: 1.0,
        },
        descriptors,
        norm_min,
        norm_max,
        config: UncertaintyConfig {
            alpha: 0.05,
            beta: 0.5,
            gamma: 1.0,
            lambda_ridge: None,
            passes: 2,
            seed: 0,
            layers: vec![],
        },
        prototypes: vec![],
        fill_value: vec![],
    }
}

/// `(x − μ)ᵀ Σ⁻¹ (x − μ)` through the closed-form 2×2 inverse.
fn mahalanobis_2d(cov: [[f64; 2]; 2], d: [f64; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let q = (cov[1][1] * d[0] * d[0] - 2.0 * cov[0][1] * d[0] * d[1] + cov[0][0] * d[1] * d[1]) / det;
    q.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn modulation_stays_inside_envelope(
        centroid in prop::collection::vec(-5.0f64..5.0, 1..6),
        offset in prop::collection::vec(-50.0f64..50.0, 6),
        rho0 in 0.0f64..20.0,
        beta in 0.0f64..1.0,
        gamma in 1e-3f64..100.0,
    ) {
        let stats = FeatureStats { centroid: centroid.clone(), rho0 };
        let feature: Vec<f64> = centroid.iter().zip(&offset).map(|(c, o)| c + o).collect();
        let u = modulation_factor(&stats, &feature, beta, gamma).unwrap();
        if beta == 0.0 {
            prop_assert_eq!(u, 1.0);
        } else {
            prop_assert!(u > 1.0 - beta && u < 1.0 + beta, "u={} beta={}", u, beta);
        }
        prop_assert_eq!(modulation_factor(&stats, &feature, 0.0, gamma).unwrap(), 1.0);
    }

    #[test]
    fn modulation_is_one_at_the_median_radius(
        rho0 in 0.0f64..1e3,
        beta in 0.0f64..1.0,
        gamma in 1e-3f64..100.0,
    ) {
        let stats = FeatureStats { centroid: vec![0.0, 0.0], rho0 };
        prop_assert_eq!(modulation_factor(&stats, &[rho0, 0.0], beta, gamma).unwrap(), 1.0);
    }

    #[test]
    fn modulation_grows_with_distance(a in 0.0f64..30.0, b in 0.0f64..30.0, beta in 0.01f64..0.99) {
        let stats = FeatureStats { centroid: vec![0.0], rho0: 10.0 };
        let (near, far) = (a.min(b), a.max(b));
        let un = modulation_factor(&stats, &[near], beta, 0.7).unwrap();
        let uf = modulation_factor(&stats, &[far], beta, 0.7).unwrap();
        prop_assert!(un <= uf);
    }

    #[test]
    fn batch_bounds_confidence_algebra(batch in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let scores = confidence_score(&bare_stats(None), &batch);
        let lo = batch.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = batch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (s, &raw) in scores.iter().zip(&batch) {
            prop_assert!((0.0..=1.0).contains(&s.normalized));
            prop_assert_eq!(s.confidence + s.normalized, 1.0);
            prop_assert_eq!(s.raw, raw);
            if hi > lo {
                if raw == lo { prop_assert_eq!(s.normalized, 0.0); }
                if raw == hi { prop_assert_eq!(s.normalized, 1.0); }
            } else {
                prop_assert_eq!(s.normalized, 0.5);
            }
        }
    }

    #[test]
    fn training_bounds_keep_order_and_range(
        batch in prop::collection::vec(0.0f64..10.0, 1..20),
        lo in 0.0f64..5.0,
        width in 0.1f64..5.0,
    ) {
        let scores = confidence_score(&bare_stats(Some((lo, lo + width))), &batch);
        for (a, sa) in batch.iter().zip(&scores) {
            prop_assert!((0.0..=1.0).contains(&sa.normalized));
            prop_assert_eq!(sa.confidence + sa.normalized, 1.0);
            for (b, sb) in batch.iter().zip(&scores) {
                if a < b { prop_assert!(sa.normalized <= sb.normalized); }
            }
        }
    }

    #[test]
    fn identity_covariance_gives_euclidean(
        mean in prop::collection::vec(-10.0f64..10.0, 4),
        x in prop::collection::vec(-10.0f64..10.0, 4),
    ) {
        let eye = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let s = DescriptorStats::new(mean.clone(), eye, 0.0).unwrap();
        let euclid = x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let m = s.mahalanobis(&Descriptor { values: x }).unwrap();
        prop_assert!((m - euclid).abs() <= 1e-9);
    }

    #[test]
    fn mahalanobis_matches_closed_form(
        a in 0.1f64..10.0,
        c in 0.1f64..10.0,
        corr in -0.9f64..0.9,
        d in prop::array::uniform2(-5.0f64..5.0),
    ) {
        let b = corr * (a * c).sqrt();
        let cov = [[a, b], [b, c]];
        let s = DescriptorStats::new(vec![1.0, -2.0], vec![vec![a, b], vec![b, c]], 0.0).unwrap();
        let m = s.mahalanobis(&Descriptor { values: vec![1.0 + d[0], -2.0 + d[1]] }).unwrap();
        let oracle = mahalanobis_2d(cov, d);
        prop_assert!((m - oracle).abs() <= 1e-9 * oracle.max(1.0));
    }

    #[test]
    fn mahalanobis_is_rotation_invariant(
        theta in 0.0f64..std::f64::consts::TAU,
        var in prop::array::uniform2(0.1f64..10.0),
        x in prop::array::uniform2(-5.0f64..5.0),
    ) {
        let (s, c) = theta.sin_cos();
        let r = [[c, -s], [s, c]];
        let rotated_cov: Vec<Vec<f64>> = (0..2)
            .map(|i| (0..2).map(|j| r[i][0] * var[0] * r[j][0] + r[i][1] * var[1] * r[j][1]).collect())
            .collect();
        let rx = vec![r[0][0] * x[0] + r[0][1] * x[1], r[1][0] * x[0] + r[1][1] * x[1]];
        let base = DescriptorStats::new(vec![0.0, 0.0], vec![vec![var[0], 0.0], vec![0.0, var[1]]], 0.0)
            .unwrap()
            .mahalanobis(&Descriptor { values: x.to_vec() })
            .unwrap();
        let turned = DescriptorStats::new(vec![0.0, 0.0], rotated_cov, 0.0)
            .unwrap()
            .mahalanobis(&Descriptor { values: rx })
            .unwrap();
        prop_assert!((base - turned).abs() <= 1e-9 * base.max(1.0));
    }
}

#[test]
fn mahalanobis_hand_case_is_exact() {
    let s = DescriptorStats::new(vec![0.0, 0.0], vec![vec![4.0, 0.0], vec![0.0, 1.0]], 0.0).unwrap();
    assert_eq!(s.mahalanobis(&Descriptor { values: vec![2.0, 0.0] }).unwrap(), 1.0);
}

#[test]
fn zero_noise_passes_equal_the_clean_pass() {
    let toy = common::toy_pipeline();
    let mut config = toy.stats.config.clone();
    config.alpha = 0.0;
    for image in &toy.images[..4] {
        let ctx = PassContext::new(&toy.model, image, &toy.stats.features, &config).unwrap();
        let clean = ctx.clean_norms(&toy.model, image).unwrap();
        for t in 0..6 {
            assert_eq!(ctx.pass_norms(&toy.model, image, &config, t).unwrap(), clean);
        }
    }
}

#[test]
fn perturbation_spread_grows_with_alpha() {
    let toy = common::toy_pipeline();
    let image = &toy.images[3];
    let spread = |alpha: f64| {
        let mut config = toy.stats.config.clone();
        config.alpha = alpha;
        config.passes = 1;
        let ctx = PassContext::new(&toy.model, image, &toy.stats.features, &config).unwrap();
        let clean = ctx.clean_norms(&toy.model, image).unwrap();
        (0..100u64)
            .map(|seed| {
                config.seed = seed;
                let eta = ctx.pass_norms(&toy.model, image, &config, 0).unwrap();
                eta.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / 100.0
    };
    let levels: Vec<f64> = [0.01, 0.05, 0.2, 0.5].iter().map(|&a| spread(a)).collect();
    assert!(levels[0] > 0.0);
    assert!(levels.windows(2).all(|w| w[0] < w[1]), "{levels:?}");
}

#[test]
fn descriptor_for_predicted_class_matches_default() {
    let toy = common::toy_pipeline();
    for image in &toy.images[..4] {
        let class = toy.model.predict(image).unwrap();
        let d = toy.stats.descriptor(&toy.model, image).unwrap();
        assert_eq!(toy.stats.descriptor_for_class(&toy.model, image, class).unwrap(), d);
        assert_eq!(compute_descriptor(&toy.model, image, &toy.stats.features, &toy.stats.config).unwrap(), d);
    }
}

#[test]
fn normalization_degenerate_range_is_half() {
    for s in normalize_with_bounds(&[3.0, 3.0], 3.0, 3.0) {
        assert_eq!((s.normalized, s.confidence), (0.5, 0.5));
    }
}
