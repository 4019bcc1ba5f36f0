//! The command-line pipeline, run as a subprocess.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anomaly_transformer::cli::RunConfig;
use anomaly_transformer::data::{save_csv, AnomalyEvent, AnomalyKind, SynthSpec, TimeSeries};
use anomaly_transformer::evaluation::EvalReport;
use anomaly_transformer::model::ModelConfig;
use anomaly_transformer::numerics::Tensor;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anomaly-transformer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_spec() -> SynthSpec {
    let mut spec = SynthSpec::desk_default(3);
    spec.train_len = 400;
    spec.val_len = 200;
    spec.test_len = 400;
    spec.events = vec![
        AnomalyEvent::new(AnomalyKind::PointGlobal, 130, 1),
        AnomalyEvent::new(AnomalyKind::PatternShapelet, 260, 5),
    ];
    spec
}

fn small_config(dir: &Path, input_dim: usize, window: usize) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        window,
        input_dim,
        d_model: 8,
        layers: 1,
        heads: 2,
        d_ff: 16,
        ..ModelConfig::default()
    };
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.learning_rate = 1e-3;
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth + train into `dir`, returning the config path.
fn trained(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&small_spec()).unwrap()).unwrap();
    let o = bin(&["synth", "--spec", s(&spec), "--out", s(&dir.join("data"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = small_config(dir, 1, 10);
    let o = bin(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    cfg
}

#[test]
fn synth_writes_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&small_spec()).unwrap()).unwrap();
    for out in ["a", "b"] {
        let o = bin(&["synth", "--spec", s(&spec), "--out", s(&dir.path().join(out))]);
        assert_eq!(code(&o), 0);
    }
    for f in ["train.csv", "val.csv", "test.csv", "test_labels.csv", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{} differs", f);
    }
}

#[test]
fn overlapping_events_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec();
    spec.events.push(AnomalyEvent::new(AnomalyKind::PatternTrend, 262, 5));
    let path = dir.path().join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    let o = bin(&["synth", "--spec", s(&path), "--out", s(&dir.path().join("d"))]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("1 (PatternShapelet") && err.contains("2 (PatternTrend"), "{}", err);
}

#[test]
fn usage_and_missing_inputs_exit_two() {
    assert_eq!(code(&bin(&["frobnicate"])), 2);
    assert_eq!(code(&bin(&["train"])), 2);
    assert_eq!(code(&bin(&["train", "--config", "/nonexistent/run.json"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1, 10);
    assert_eq!(code(&bin(&["train", "--config", s(&cfg)])), 2);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path());
    let out = dir.path().join("out");
    assert!(out.join("checkpoint.json").is_file());
    let log = std::fs::read_to_string(out.join("trainlog.csv")).unwrap();
    assert!(log.starts_with("epoch,recon_loss,assdis,val_loss"));

    assert_eq!(code(&bin(&["score", "--config", s(&cfg)])), 0);
    let scores = std::fs::read_to_string(out.join("scores_test.csv")).unwrap();
    assert_eq!(scores.lines().count(), 401);

    let o = bin(&["eval", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    let parsed = EvalReport::from_json(&report).unwrap();
    assert_eq!(EvalReport::from_json(&parsed.to_json().unwrap()).unwrap(), parsed);
    assert_eq!(parsed.roc_points.len(), 7);
    let roc = std::fs::read_to_string(out.join("roc.csv")).unwrap();
    assert!(roc.starts_with("r,delta,fpr,tpr"));
    assert!(out.join("table.txt").is_file());

    let o = bin(&[
        "plot",
        "--scores",
        s(&out.join("scores_test.csv")),
        "--labels",
        s(&dir.path().join("data/test_labels.csv")),
        "--data",
        s(&dir.path().join("data/test.csv")),
        "--report",
        s(&out.join("report.json")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert_well_formed(&svg);
    let delta = format!("data-delta=\"{}\"", parsed.delta);
    assert!(svg.contains(&delta), "threshold line should carry {}", delta);
    assert!(svg.contains("class=\"truth\""));
    assert!(out.join("plot.csv").is_file());
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path());
    let run = |seed: &str, out: &str| {
        let od = dir.path().join(out);
        let o = bin(&["train", "--config", s(&cfg), "--seed", seed, "--out-dir", s(&od)]);
        assert_eq!(code(&o), 0);
        std::fs::read_to_string(od.join("trainlog.csv")).unwrap()
    };
    let a = run("5", "s5a");
    assert_eq!(a, run("5", "s5b"));
    assert_ne!(a, run("6", "s6"));
}

#[test]
fn score_covers_every_point_and_honors_criterion() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    // A fresh window-100 model over a 250-point series.
    let cfg = small_config(dir.path(), 1, 100);
    let o = bin(&["train", "--config", s(&cfg), "--epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let series = TimeSeries::univariate(&(0..250).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<_>>()).unwrap();
    let data = dir.path().join("short.csv");
    save_csv(&series, &data).unwrap();
    let out = dir.path().join("short_scores.csv");
    let o = bin(&[
        "score", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--criterion", "recon_only",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers, &csv::StringRecord::from(vec!["index", "score", "recon_component", "assdis_component"]));
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 250);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), i);
        assert_eq!(r[1], r[2]);
    }
}

#[test]
fn input_dim_mismatch_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2, 10);
    let series = TimeSeries::new(Tensor::new(vec![60, 2], vec![0.5; 120]).unwrap(), None).unwrap();
    std::fs::create_dir_all(dir.path().join("data")).unwrap();
    for f in ["train.csv", "val.csv"] {
        save_csv(&series, &dir.path().join("data").join(f)).unwrap();
    }
    assert_eq!(code(&bin(&["train", "--config", s(&cfg)])), 0);
    let one = dir.path().join("one.csv");
    save_csv(&TimeSeries::univariate(&[0.1; 30]).unwrap(), &one).unwrap();
    let o = bin(&["score", "--config", s(&cfg), "--data", s(&one)]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("input_dim"));
}

#[test]
fn eval_length_mismatch_and_plot_without_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1, 10);
    let write = |name: &str, n: usize| {
        let p = dir.path().join(name);
        let mut body = String::from("index,score,recon_component,assdis_component\n");
        for i in 0..n {
            body.push_str(&format!("{},{},{},0\n", i, i as f64, i as f64));
        }
        std::fs::write(&p, body).unwrap();
        p
    };
    let test = write("t.csv", 20);
    let val = write("v.csv", 20);
    let labels = dir.path().join("l.csv");
    std::fs::write(&labels, "0\n".repeat(15)).unwrap();
    let o = bin(&[
        "eval", "--config", s(&cfg), "--test-scores", s(&test), "--val-scores", s(&val), "--labels", s(&labels),
    ]);
    assert_eq!(code(&o), 2);

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("plot");
    let o = bin(&["plot", "--scores", s(&test), "--labels", s(&empty), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert_well_formed(&svg);
    assert!(!svg.contains("class=\"truth\""));
}

#[test]
fn perfect_scores_give_unit_f1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1, 10);
    let mut truth = vec![0u8; 100];
    truth[40..45].iter_mut().for_each(|t| *t = 1);
    let mut test = String::from("index,score,recon_component,assdis_component\n");
    for (i, t) in truth.iter().enumerate() {
        test.push_str(&format!("{},{},0,0\n", i, 2.0 * *t as f64 + i as f64 * 1e-3));
    }
    let mut val = String::from("index,score,recon_component,assdis_component\n");
    for i in 0..100 {
        val.push_str(&format!("{},{},0,0\n", i, 1.0 + i as f64 * 1e-3));
    }
    let labels: String = truth.iter().map(|t| format!("{}\n", t)).collect();
    for (n, b) in [("t.csv", &test), ("v.csv", &val), ("l.csv", &labels)] {
        std::fs::write(dir.path().join(n), b).unwrap();
    }
    let out = dir.path().join("e");
    let o = bin(&[
        "eval",
        "--config",
        s(&cfg),
        "--test-scores",
        s(&dir.path().join("t.csv")),
        "--val-scores",
        s(&dir.path().join("v.csv")),
        "--labels",
        s(&dir.path().join("l.csv")),
        "--out-dir",
        s(&out),
        "--ratio",
        "0.01",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("table.txt")).unwrap();
    assert!(table.contains("1.0000"), "{}", table);
    let report = EvalReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.f1, 1.0);
}

/// Tags balance and nest, attributes are quoted, and nothing trails the root.
fn assert_well_formed(svg: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = svg.trim();
    assert!(rest.starts_with("<svg"));
    let mut closed_root = false;
    while let Some(open) = rest.find('<') {
        assert!(!closed_root, "content after root element");
        assert!(!rest[..open].contains('>'), "stray '>'");
        let close = rest[open..].find('>').expect("unterminated tag") + open;
        let tag = &rest[open + 1..close];
        assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in <{}>", tag);
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched </{}>", name);
            closed_root = stack.is_empty();
        } else if !tag.ends_with('/') {
            stack.push(tag.split_whitespace().next().unwrap().to_string());
        }
        rest = &rest[close + 1..];
    }
    assert!(stack.is_empty() && closed_root, "unclosed elements {:?}", stack);
}
