//! Per-point association discrepancy of an untrained model on a window
//! containing a spike, under each available metric.

use anomaly_transformer::discrepancy::{assoc_discrepancy, DiscrepancyConfig, Metric};
use anomaly_transformer::model::{forward, ModelConfig, ModelParams};
use anomaly_transformer::numerics::Tensor;

fn main() -> anomaly_transformer::Result<()> {
    let n = 20;
    let mut values: Vec<f64> = (0..n).map(|t| (t as f64 * 0.6).sin()).collect();
    values[12] = 4.0;
    let x = Tensor::new(vec![n, 1], values)?;
    let params = ModelParams::init(&ModelConfig::desk(n, 1), 1)?;
    let out = forward(&x, &params)?;

    for metric in [Metric::SymKl, Metric::Jsd, Metric::CrossEntropy, Metric::L2] {
        let cfg = DiscrepancyConfig {
            metric,
            ..DiscrepancyConfig::default()
        };
        let d = assoc_discrepancy(&out.layers, &cfg)?;
        let row: Vec<String> = d.iter().map(|v| format!("{:.2}", v)).collect();
        println!("{:<14} {}", format!("{:?}", metric), row.join(" "));
    }
    Ok(())
}
