//! One Anomaly-Attention block: the Gaussian prior next to the learned
//! series map for a single query point.

use anomaly_transformer::attention::attention_forward;
use anomaly_transformer::model::{ModelConfig, ModelParams};
use anomaly_transformer::numerics::{seeded_init, InitScheme};

fn main() -> anomaly_transformer::Result<()> {
    let cfg = ModelConfig {
        window: 12,
        d_model: 16,
        heads: 2,
        ..ModelConfig::desk(12, 1)
    };
    let params = ModelParams::init(&cfg, 7)?;
    let hidden = seeded_init(&[12, 16], 8, InitScheme::UniformFan);
    let out = attention_forward(&hidden, &params.weights.layers[0].attention, &cfg.attention())?;

    let i = 5;
    for m in 0..out.heads() {
        println!("head {}  sigma_{} = {:.3}", m, i, out.sigma.at(i, m));
        let fmt = |r: &[f64]| r.iter().map(|v| format!("{:.3}", v)).collect::<Vec<_>>().join(" ");
        println!("  prior  {}", fmt(out.prior_row(m, i)));
        println!("  series {}", fmt(out.series_row(m, i)));
    }
    Ok(())
}
