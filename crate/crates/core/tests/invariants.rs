//! Property tests for the distribution, detection and evaluation contracts.

mod common;

use anomaly_transformer::detection::{combine, predict, select_threshold, Criterion, ThresholdSpec};
use anomaly_transformer::evaluation::{point_adjust, roc_auc, trapezoid_auc, DEFAULT_R_GRID};
use common::{check_maps, random_block};
use proptest::prelude::*;

#[test]
fn maps_over_ten_parameter_draws() {
    for seed in 0..10 {
        check_maps(&random_block(seed, 12, 1.0 + seed as f64)).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maps_are_distributions(seed in 0u64..10_000, n in 2usize..16, scale in 0.1f64..20.0) {
        prop_assert_eq!(check_maps(&random_block(seed, n, scale)), Ok(()));
    }

    #[test]
    fn point_adjust_idempotent_and_monotone(
        truth in prop::collection::vec(0u8..=1, 1..40),
        a in prop::collection::vec(0u8..=1, 40),
        b in prop::collection::vec(0u8..=1, 40),
    ) {
        let n = truth.len();
        let pred = &a[..n];
        let more: Vec<u8> = pred.iter().zip(&b[..n]).map(|(x, y)| x | y).collect();
        let adj = point_adjust(pred, &truth).unwrap();
        prop_assert_eq!(&point_adjust(&adj, &truth).unwrap(), &adj);
        let adj_more = point_adjust(&more, &truth).unwrap();
        for i in 0..n {
            prop_assert!(adj[i] >= pred[i]);
            prop_assert!(adj_more[i] >= adj[i]);
        }
    }

    #[test]
    fn ratio_threshold_flags_exact_count(
        raw in prop::collection::btree_set(-1_000_000i64..1_000_000, 1..300),
        r in 0.001f64..0.999,
    ) {
        let val: Vec<f64> = raw.iter().map(|v| *v as f64 * 1e-3).collect();
        let delta = select_threshold(&val, ThresholdSpec::Ratio { r }).unwrap();
        let flagged = predict(&val, delta).iter().filter(|&&p| p == 1).count();
        let k = (r * val.len() as f64).floor() as usize;
        prop_assert_eq!(flagged, k.min(val.len() - 1));
    }

    #[test]
    fn fixed_threshold_is_strict(scores in prop::collection::vec(-5.0f64..5.0, 1..50), delta in -5.0f64..5.0) {
        let d = select_threshold(&scores, ThresholdSpec::Fixed { delta }).unwrap();
        prop_assert_eq!(d, delta);
        for (s, p) in scores.iter().zip(predict(&scores, d)) {
            prop_assert_eq!(p == 1, *s > delta);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_rescoring(
        test in prop::collection::vec(0.0f64..1.0, 5..60),
        val in prop::collection::vec(0.0f64..1.0, 5..60),
        truth in prop::collection::vec(0u8..=1, 60),
    ) {
        let truth = &truth[..test.len()];
        let f = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| (3.0 * x).exp() + 2.0).collect() };
        let (_, a) = roc_auc(&test, truth, &val, &DEFAULT_R_GRID).unwrap();
        let (_, b) = roc_auc(&f(&test), truth, &f(&val), &DEFAULT_R_GRID).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn trapezoid_area_bounded(pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..10)) {
        let a = trapezoid_auc(&pts);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn criteria_compose_components(
        pairs in prop::collection::vec((0.0f64..50.0, 0.0f64..10.0), 1..30),
    ) {
        let (assdis, recon): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mul = combine(&assdis, &recon, Criterion::Multiplication).unwrap();
        let w_sum: f64 = mul.assdis_weight.iter().sum();
        prop_assert!((w_sum - 1.0).abs() < 1e-9);
        for i in 0..recon.len() {
            prop_assert!((mul.score[i] - mul.assdis_weight[i] * recon[i]).abs() < 1e-12);
            for j in 0..recon.len() {
                if assdis[i] < assdis[j] {
                    prop_assert!(mul.assdis_weight[i] >= mul.assdis_weight[j]);
                }
            }
        }
        let rec = combine(&assdis, &recon, Criterion::ReconOnly).unwrap();
        prop_assert_eq!(&rec.score, &recon);
        let ad = combine(&assdis, &recon, Criterion::AssdisOnly).unwrap();
        prop_assert_eq!(&ad.score, &mul.assdis_weight);
    }
}
