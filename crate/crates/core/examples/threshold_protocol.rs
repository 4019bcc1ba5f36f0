//! Threshold selection on validation scores: ratio mode flags a fixed
//! fraction of validation points; fixed mode uses δ directly. Then the
//! point-adjusted confusion on a toy test split.

use anomaly_transformer::detection::{predict, select_threshold, ThresholdSpec};
use anomaly_transformer::evaluation::{point_adjust, prf, roc_auc, DEFAULT_R_GRID};

fn main() -> anomaly_transformer::Result<()> {
    let val: Vec<f64> = (0..200).map(|i| ((i * 37) % 200) as f64 / 200.0).collect();
    for r in [0.005, 0.01, 0.1] {
        let delta = select_threshold(&val, ThresholdSpec::Ratio { r })?;
        let flagged = predict(&val, delta).iter().filter(|&&p| p == 1).count();
        println!("r = {:<5} delta = {:.3}  flags {} of {}", r, delta, flagged, val.len());
    }

    let mut truth = vec![0u8; 40];
    truth[10..16].iter_mut().for_each(|t| *t = 1);
    let test: Vec<f64> = (0..40).map(|i| if i == 13 { 1.2 } else { 0.3 + 0.01 * i as f64 }).collect();
    let delta = select_threshold(&val, ThresholdSpec::Fixed { delta: 0.9 })?;
    let raw = predict(&test, delta);
    let adjusted = point_adjust(&raw, &truth)?;
    println!("raw      {:?}", prf(&raw, &truth)?);
    println!("adjusted {:?}", prf(&adjusted, &truth)?);

    let (points, auc) = roc_auc(&test, &truth, &val, &DEFAULT_R_GRID)?;
    for p in &points {
        println!("r {:<5} fpr {:.3} tpr {:.3}", p.r, p.fpr, p.tpr);
    }
    println!("AUC {:.4}", auc);
    Ok(())
}
