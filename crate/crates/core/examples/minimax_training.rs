//! Trains the laptop-scale model on the synthetic benchmark and prints the
//! per-epoch log. Pass `max_only` or `recon_only` to switch objectives.
//!
//!     cargo run --release --example minimax_training -- [mode]

use anomaly_transformer::cli::RunConfig;
use anomaly_transformer::data::{generate, normalize, NormStats, SynthSpec};
use anomaly_transformer::training::{fit, TrainMode};

fn main() -> anomaly_transformer::Result<()> {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("max_only") => TrainMode::MaxOnly,
        Some("recon_only") => TrainMode::ReconOnly,
        _ => TrainMode::Minimax,
    };
    let splits = generate(&SynthSpec::desk_default(0))?;
    let stats = NormStats::fit(&splits.train);
    let (train, val) = (normalize(&splits.train, &stats)?, normalize(&splits.val, &stats)?);

    let mut cfg = RunConfig::desk(1);
    cfg.train.mode = mode;
    let (params, log) = fit(&train, &val, &cfg.model, &cfg.train_config())?;
    print!("{}", log.to_csv());
    println!(
        "{:?}: {} parameters, best epoch {}{}",
        mode,
        params.num_parameters(),
        log.best_epoch,
        if log.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}
