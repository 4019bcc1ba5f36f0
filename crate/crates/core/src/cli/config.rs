use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{Criterion, ThresholdSpec};
use crate::discrepancy::DiscrepancyConfig;
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_ADJ_WIDTH, DEFAULT_R_GRID};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Input files, as written by `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub test_labels: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            train: "data/train.csv".into(),
            val: "data/val.csv".into(),
            test: "data/test.csv".into(),
            test_labels: "data/test_labels.csv".into(),
        }
    }
}

impl DataPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.train, &mut self.val, &mut self.test, &mut self.test_labels] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// One file driving every pipeline command. Relative paths resolve against
/// the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataPaths,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub discrepancy: DiscrepancyConfig,
    pub threshold: ThresholdSpec,
    pub criterion: Criterion,
    pub r_grid: Vec<f64>,
    pub adj_width: usize,
    pub normalize: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            output_dir: "out".into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            discrepancy: DiscrepancyConfig::default(),
            threshold: ThresholdSpec::default(),
            criterion: Criterion::default(),
            r_grid: DEFAULT_R_GRID.to_vec(),
            adj_width: DEFAULT_ADJ_WIDTH,
            normalize: true,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Laptop-scale run: window 50, `d_model` 64, 4 heads, 2 layers, and a
    /// batch size small enough to take a useful number of steps on 2000 points.
    /// The looser probability floor keeps the discrepancy from being swamped
    /// by clamped near-zero prior entries. The flag ratio sits well under the
    /// ~2% anomaly share so point adjustment, not false alarms, carries recall.
    pub fn desk(input_dim: usize) -> Self {
        Self {
            model: ModelConfig::desk(50, input_dim),
            train: TrainConfig {
                learning_rate: 3e-4,
                batch_size: 4,
                ..TrainConfig::default()
            },
            discrepancy: DiscrepancyConfig {
                prob_floor: 1e-2,
                ..DiscrepancyConfig::default()
            },
            threshold: ThresholdSpec::Ratio { r: 0.005 },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Config(format!("config file {} not found", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.resolve(base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Training settings with the run-wide seed and discrepancy applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            discrepancy: self.discrepancy.clone(),
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        self.discrepancy.validate(self.model.layers)?;
        self.threshold.validate()?;
        if self.r_grid.is_empty() || self.r_grid.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::Config("r_grid must be non-empty with entries in (0, 1)".into()));
        }
        if self.adj_width == 0 {
            return Err(Error::Config("adj_width must be positive".into()));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("checkpoint.json")
    }
}

/// Fails with a configuration error when an input file is missing.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} file {} does not exist", what, path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, RunConfig::desk(1).to_json()).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.data.train, dir.path().join("data/train.csv"));
        assert_eq!(cfg.model.window, 50);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.r_grid, DEFAULT_R_GRID.to_vec());
        assert_eq!(cfg.train.lambda, 3.0);
    }

    #[test]
    fn bad_grid_rejected() {
        let cfg = RunConfig {
            r_grid: vec![1.5],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
