//! Command-line pipeline: synth → train → score → eval → plot.
//!
//! Exit codes: 0 ok, 2 configuration or input, 3 I/O, 4 numeric failure,
//! 5 checkpoint/config incompatibility.

mod config;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{require_file, DataPaths, RunConfig};

use crate::data::{generate, load_csv, load_labels, normalize, save_csv, save_labels, NormStats, SynthSpec, TimeSeries};
use crate::detection::{score_series, Criterion, ScoreSeries, ThresholdSpec};
use crate::error::{Error, Result};
use crate::evaluation::{adjacent_weights, contrast_from_weights, EvalReport};
use crate::io::write_atomic;
use crate::model::{Checkpoint, ModelConfig};
use crate::training::{fit, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "anomaly-transformer", version, about = "Association-discrepancy anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/val/test splits with labelled anomalies.
    Synth {
        /// Synthetic spec JSON; the built-in benchmark when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json and trainlog.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TrainMode>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score a series; validation and test splits when --data is omitted.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        criterion: Option<Criterion>,
    },
    /// Threshold, point-adjust and report P/R/F1, ROC and contrast.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        test_scores: Option<PathBuf>,
        #[arg(long)]
        val_scores: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Threshold ratio; overrides the config.
        #[arg(long, conflicts_with = "delta")]
        ratio: Option<f64>,
        /// Fixed threshold; overrides the config.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Render plot.svg and plot.csv from a scores file.
    Plot {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Raw series to draw above the scores.
        #[arg(long)]
        data: Option<PathBuf>,
        /// report.json supplying the threshold.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    match s {
        "minimax" => Ok(TrainMode::Minimax),
        "max_only" => Ok(TrainMode::MaxOnly),
        "recon_only" => Ok(TrainMode::ReconOnly),
        _ => Err(format!("unknown mode '{}' (minimax, max_only, recon_only)", s)),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 3,
        Error::Numeric(_) | Error::NonFinite(_) => 4,
        Error::Incompatible { .. } => 5,
        _ => 2,
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { spec, seed, out } => cmd_synth(spec.as_deref(), seed, &out),
        Command::Train {
            config,
            seed,
            epochs,
            mode,
            out_dir,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(m) = mode {
                cfg.train.mode = m;
            }
            if let Some(d) = out_dir {
                cfg.output_dir = d;
            }
            cmd_train(&cfg)
        }
        Command::Score {
            config,
            checkpoint,
            data,
            out,
            criterion,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(c) = criterion {
                cfg.criterion = c;
            }
            let ckpt = checkpoint.unwrap_or_else(|| cfg.checkpoint_path());
            cmd_score(&cfg, &ckpt, data.as_deref(), out.as_deref())
        }
        Command::Eval {
            config,
            test_scores,
            val_scores,
            labels,
            out_dir,
            ratio,
            delta,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(r) = ratio {
                cfg.threshold = ThresholdSpec::Ratio { r };
            }
            if let Some(d) = delta {
                cfg.threshold = ThresholdSpec::Fixed { delta: d };
            }
            let test = test_scores.unwrap_or_else(|| cfg.output_dir.join("scores_test.csv"));
            let val = val_scores.unwrap_or_else(|| cfg.output_dir.join("scores_val.csv"));
            let labels = labels.unwrap_or_else(|| cfg.data.test_labels.clone());
            let out = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
            cmd_eval(&cfg, &test, &val, &labels, &out)
        }
        Command::Plot {
            scores,
            labels,
            data,
            report,
            out_dir,
        } => cmd_plot(&scores, labels.as_deref(), data.as_deref(), report.as_deref(), &out_dir),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a SynthSpec,
    anomaly_points: usize,
    anomaly_ratio: f64,
    files: [&'a str; 4],
}

pub fn cmd_synth(spec_path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            require_file(p, "spec")?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| Error::Spec(format!("{}: {}", p.display(), e)))?
        }
        None => SynthSpec::desk_default(seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let splits = generate(&spec)?;
    let labels = splits
        .test
        .labels
        .clone()
        .ok_or_else(|| Error::Contract("test split without labels".into()))?;
    let manifest = Manifest {
        spec: &spec,
        anomaly_points: spec.anomaly_points(),
        anomaly_ratio: spec.anomaly_ratio(),
        files: ["train.csv", "val.csv", "test.csv", "test_labels.csv"],
    };
    let manifest = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Spec(e.to_string()))?;

    ensure_dir(out)?;
    save_csv(&splits.train, &out.join("train.csv"))?;
    save_csv(&splits.val, &out.join("val.csv"))?;
    save_csv(&splits.test, &out.join("test.csv"))?;
    save_labels(&labels, &out.join("test_labels.csv"))?;
    write_atomic(&out.join("manifest.json"), manifest.as_bytes())?;
    println!(
        "wrote {} train / {} val / {} test points ({} anomalous, ratio {:.4}) to {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        spec.anomaly_points(),
        spec.anomaly_ratio(),
        out.display()
    );
    Ok(())
}

fn load_series(path: &Path, what: &str) -> Result<TimeSeries> {
    require_file(path, what)?;
    load_csv(path, None)
}

fn apply_norm(series: &TimeSeries, norm: Option<&NormStats>) -> Result<TimeSeries> {
    match norm {
        Some(n) => normalize(series, n),
        None => Ok(series.clone()),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let train_raw = load_series(&cfg.data.train, "training data")?;
    let val_raw = load_series(&cfg.data.val, "validation data")?;
    if train_raw.channels() != cfg.model.input_dim {
        return Err(Error::Config(format!(
            "training data has {} channels but model.input_dim is {}",
            train_raw.channels(),
            cfg.model.input_dim
        )));
    }
    let norm = cfg.normalize.then(|| NormStats::fit(&train_raw));
    let train = apply_norm(&train_raw, norm.as_ref())?;
    let val = apply_norm(&val_raw, norm.as_ref())?;

    let (params, log) = fit(&train, &val, &cfg.model, &cfg.train_config())?;

    ensure_dir(&cfg.output_dir)?;
    Checkpoint { params, norm }.save(&cfg.checkpoint_path())?;
    write_atomic(&cfg.output_dir.join("trainlog.csv"), log.to_csv().as_bytes())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "trained {} epochs (best {}): recon {:.6} assdis {:.6} val {:.6}",
            log.epochs.len(),
            log.best_epoch,
            last.recon_loss,
            last.assdis,
            last.val_loss
        );
    }
    Ok(())
}

fn check_compatible(run: &ModelConfig, ckpt: &ModelConfig) -> Result<()> {
    let fields = [
        ("window", run.window, ckpt.window),
        ("input_dim", run.input_dim, ckpt.input_dim),
        ("d_model", run.d_model, ckpt.d_model),
        ("layers", run.layers, ckpt.layers),
        ("heads", run.heads, ckpt.heads),
        ("d_ff", run.d_ff, ckpt.d_ff),
    ];
    for (name, a, b) in fields {
        if a != b {
            return Err(Error::Incompatible {
                field: name.into(),
                message: format!("config has {}, checkpoint has {}", a, b),
            });
        }
    }
    Ok(())
}

fn trace_path(scores: &Path) -> PathBuf {
    let stem = scores.file_stem().and_then(|s| s.to_str()).unwrap_or("scores");
    scores.with_file_name(format!("{}_trace.csv", stem))
}

fn trace_csv(s: &ScoreSeries, adj_width: usize) -> Result<String> {
    let (w, _) = adjacent_weights(s, adj_width)?;
    let sigma = s.sigma();
    let mut out = String::from("index,adjacent_weight,sigma\n");
    for i in 0..s.len() {
        out.push_str(&format!("{},{},{}\n", i, w[i], sigma[i]));
    }
    Ok(out)
}

pub fn cmd_score(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    require_file(checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compatible(&cfg.model, &ckpt.params.config)?;
    let jobs: Vec<(PathBuf, PathBuf)> = match data {
        Some(d) => vec![(
            d.to_path_buf(),
            out.map_or_else(|| cfg.output_dir.join("scores.csv"), Path::to_path_buf),
        )],
        None => vec![
            (cfg.data.val.clone(), cfg.output_dir.join("scores_val.csv")),
            (cfg.data.test.clone(), cfg.output_dir.join("scores_test.csv")),
        ],
    };
    let mut results = Vec::new();
    for (input, output) in jobs {
        let raw = load_series(&input, "data")?;
        if raw.channels() != ckpt.params.config.input_dim {
            return Err(Error::Incompatible {
                field: "input_dim".into(),
                message: format!(
                    "{} has {} channels, checkpoint expects {}",
                    input.display(),
                    raw.channels(),
                    ckpt.params.config.input_dim
                ),
            });
        }
        let series = apply_norm(&raw, ckpt.norm.as_ref())?;
        let s = score_series(&series, &ckpt.params, cfg.criterion, &cfg.discrepancy)?;
        let trace = trace_csv(&s, cfg.adj_width)?;
        results.push((output, s, trace));
    }
    for (output, s, trace) in &results {
        if let Some(dir) = output.parent() {
            if !dir.as_os_str().is_empty() {
                ensure_dir(dir)?;
            }
        }
        write_atomic(output, s.to_csv().as_bytes())?;
        write_atomic(&trace_path(output), trace.as_bytes())?;
        println!("scored {} points -> {}", s.len(), output.display());
    }
    Ok(())
}

/// Reads one named column from a headed CSV.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("{:?}", other),
        },
    })?;
    let parse = |line: u64, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let headers = reader.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| parse(1, format!("missing column '{}'", column)))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = rec.get(idx).ok_or_else(|| parse(line, "short row".into()))?;
        out.push(
            cell.parse()
                .map_err(|_| parse(line, format!("'{}' is not a number", cell)))?,
        );
    }
    Ok(out)
}

pub fn cmd_eval(cfg: &RunConfig, test: &Path, val: &Path, labels: &Path, out: &Path) -> Result<()> {
    cfg.validate()?;
    require_file(test, "test scores")?;
    require_file(val, "validation scores")?;
    require_file(labels, "labels")?;
    let test_scores = read_column(test, "score")?;
    let val_scores = read_column(val, "score")?;
    let truth = load_labels(labels)?;
    if truth.len() != test_scores.len() {
        return Err(Error::Config(format!(
            "{} test scores but {} labels",
            test_scores.len(),
            truth.len()
        )));
    }
    let trace = trace_path(test);
    let contrast = if trace.is_file() {
        let w = read_column(&trace, "adjacent_weight")?;
        if w.len() != truth.len() {
            return Err(Error::Config("trace file does not match labels".into()));
        }
        Some(contrast_from_weights(&w, &truth, cfg.adj_width)?)
    } else {
        None
    };
    let report = EvalReport::build(&test_scores, &val_scores, &truth, cfg.threshold, &cfg.r_grid, contrast)?;
    let table = report.table(&cfg.criterion.to_string());

    ensure_dir(out)?;
    write_atomic(&out.join("report.json"), report.to_json()?.as_bytes())?;
    write_atomic(&out.join("table.txt"), table.as_bytes())?;
    write_atomic(&out.join("roc.csv"), report.roc_csv().as_bytes())?;
    print!("{}", table);
    Ok(())
}

pub fn cmd_plot(
    scores: &Path,
    labels: Option<&Path>,
    data: Option<&Path>,
    report: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let score = read_column(scores, "score")?;
    let truth = match labels {
        Some(p) => load_labels(p)?,
        None => Vec::new(),
    };
    let series = match data {
        Some(p) => Some(load_csv(p, None)?.channel(0)),
        None => None,
    };
    let delta = match report {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(EvalReport::from_json(&text)?.delta)
        }
        None => None,
    };
    if !truth.is_empty() && truth.len() != score.len() {
        return Err(Error::Config(format!("{} labels for {} scores", truth.len(), score.len())));
    }
    if let Some(s) = &series {
        if s.len() != score.len() {
            return Err(Error::Config(format!("{} data rows for {} scores", s.len(), score.len())));
        }
    }
    let pd = plot::PlotData {
        series: series.as_deref(),
        score: &score,
        labels: &truth,
        delta,
    };
    ensure_dir(out)?;
    write_atomic(&out.join("plot.svg"), plot::render_svg(&pd).as_bytes())?;
    write_atomic(&out.join("plot.csv"), plot::tidy_csv(&pd).as_bytes())?;
    println!("wrote {}", out.join("plot.svg").display());
    Ok(())
}
