//! Library routines against naive reimplementations on small instances.

mod common;

use anomaly_transformer::detection::{select_threshold, ThresholdSpec};
use anomaly_transformer::discrepancy::{assoc_discrepancy, DiscrepancyConfig};
use anomaly_transformer::evaluation::{point_adjust, roc_auc};
use anomaly_transformer::numerics::rng_from_seed;
use common::*;
use rand::Rng;

#[test]
fn assoc_discrepancy_matches_loops() {
    let cfg = DiscrepancyConfig::default();
    for seed in 0..5 {
        let layers: Vec<_> = (0..2).map(|l| random_block(seed * 3 + l, 8, 1.0 + l as f64)).collect();
        let got = assoc_discrepancy(&layers, &cfg).unwrap();
        let want = naive_assoc_discrepancy(&layers, cfg.prob_floor);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!((g - w).abs() < 1e-10, "point {}: {} vs {}", i, g, w);
        }
    }
}

#[test]
fn point_adjust_matches_naive() {
    let mut rng = rng_from_seed(9);
    for _ in 0..500 {
        let n = rng.random_range(1..=20);
        let truth = random_bits(&mut rng, n, 0.4);
        let pred = random_bits(&mut rng, n, 0.3);
        assert_eq!(point_adjust(&pred, &truth).unwrap(), naive_point_adjust(&pred, &truth));
    }
}

#[test]
fn select_threshold_matches_naive() {
    let mut rng = rng_from_seed(10);
    for _ in 0..500 {
        let n = rng.random_range(1..=20);
        let val: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 6.0).round()).collect();
        let r = rng.random_range(0.01..0.99);
        let got = select_threshold(&val, ThresholdSpec::Ratio { r }).unwrap();
        assert_eq!(got, naive_threshold(&val, r), "val {:?} r {}", val, r);
    }
}

#[test]
fn auc_matches_naive() {
    let mut rng = rng_from_seed(11);
    let grid = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7];
    for _ in 0..300 {
        let n = rng.random_range(2..=20);
        let truth = random_bits(&mut rng, n, 0.3);
        let test = random_vec(n, rng.random());
        let val = random_vec(rng.random_range(1..=20), rng.random());
        let (_, auc) = roc_auc(&test, &truth, &val, &grid).unwrap();
        let want = naive_auc(&test, &truth, &val, &grid);
        assert!((auc - want).abs() < 1e-10, "{} vs {}", auc, want);
    }
}
