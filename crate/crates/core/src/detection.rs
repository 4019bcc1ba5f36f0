//! Association-based anomaly scoring and threshold selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{window_slices, TimeSeries, WindowMode};
use crate::discrepancy::{assoc_discrepancy, head_mean, DiscrepancyConfig};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardResult, ModelParams};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Multiplication,
    Addition,
    AssdisOnly,
    ReconOnly,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplication" => Ok(Self::Multiplication),
            "addition" => Ok(Self::Addition),
            "assdis_only" => Ok(Self::AssdisOnly),
            "recon_only" => Ok(Self::ReconOnly),
            other => Err(Error::Config(format!(
                "unknown criterion '{}' (expected multiplication, addition, assdis_only or recon_only)",
                other
            ))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Multiplication => "multiplication",
            Self::Addition => "addition",
            Self::AssdisOnly => "assdis_only",
            Self::ReconOnly => "recon_only",
        })
    }
}

/// Per-point scoring components of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowScores {
    pub score: Vec<f64>,
    /// Channel-mean squared reconstruction error.
    pub recon: Vec<f64>,
    /// Softmax over the window of the negated discrepancy.
    pub assdis_weight: Vec<f64>,
    /// Raw association discrepancy.
    pub assdis: Vec<f64>,
}

fn softmax_neg(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = v.iter().map(|a| (m - a).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|a| a / s).collect()
}

/// Combines per-point discrepancy and reconstruction error into scores.
pub fn combine(assdis: &[f64], recon: &[f64], criterion: Criterion) -> Result<WindowScores> {
    if assdis.len() != recon.len() || assdis.is_empty() {
        return Err(Error::Shape(format!(
            "{} discrepancy values for {} reconstruction errors",
            assdis.len(),
            recon.len()
        )));
    }
    let c_ad = softmax_neg(assdis);
    let score = c_ad
        .iter()
        .zip(recon)
        .map(|(a, r)| match criterion {
            Criterion::Multiplication => a * r,
            Criterion::Addition => a + r,
            Criterion::AssdisOnly => *a,
            Criterion::ReconOnly => *r,
        })
        .collect();
    Ok(WindowScores {
        score,
        recon: recon.to_vec(),
        assdis_weight: c_ad,
        assdis: assdis.to_vec(),
    })
}

/// Channel-mean squared error per row.
pub fn recon_error(x: &Tensor, x_hat: &Tensor) -> Result<Vec<f64>> {
    if x.shape() != x_hat.shape() || x.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "reconstruction {:?} for window {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    let d = x.cols();
    Ok(x.data()
        .chunks(d)
        .zip(x_hat.data().chunks(d))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / d as f64)
        .collect())
}

pub fn window_score(
    fr: &ForwardResult,
    x: &Tensor,
    criterion: Criterion,
    cfg: &DiscrepancyConfig,
) -> Result<WindowScores> {
    let recon = recon_error(x, &fr.x_hat)?;
    let dis = assoc_discrepancy(&fr.layers, cfg)?;
    combine(&dis, &recon, criterion)
}

/// Maps captured while scoring one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTrace {
    /// First series row covered by the window.
    pub start: usize,
    /// Rows before this offset were already scored by an earlier window.
    pub keep_from: usize,
    /// Series association averaged over heads and layers, `N×N`.
    pub series: Tensor,
    /// Learned σ averaged over heads and layers, one per window row.
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSeries {
    pub score: Vec<f64>,
    pub recon: Vec<f64>,
    pub assdis_weight: Vec<f64>,
    pub assdis: Vec<f64>,
    pub window_id: Vec<usize>,
    pub windows: Vec<WindowTrace>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    /// Per-point learned σ, taken from the window that scored the point.
    pub fn sigma(&self) -> Vec<f64> {
        self.windows
            .iter()
            .flat_map(|w| w.sigma[w.keep_from..].iter().copied())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,score,recon_component,assdis_component\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i, self.score[i], self.recon[i], self.assdis_weight[i]
            ));
        }
        out
    }
}

fn layer_mean(fr: &ForwardResult, layers: &[usize]) -> Result<(Tensor, Vec<f64>)> {
    let n = fr.x_hat.rows();
    let mut series = vec![0.0; n * n];
    let mut sigma = vec![0.0; n];
    for &l in layers {
        let out = &fr.layers[l];
        let s = head_mean(&out.series)?;
        for (a, b) in series.iter_mut().zip(s.data()) {
            *a += b;
        }
        let h = out.heads();
        for (i, row) in out.sigma.data().chunks(h).enumerate() {
            sigma[i] += row.iter().sum::<f64>() / h as f64;
        }
    }
    let k = layers.len() as f64;
    series.iter_mut().for_each(|v| *v /= k);
    sigma.iter_mut().for_each(|v| *v /= k);
    Ok((Tensor::new(vec![n, n], series)?, sigma))
}

/// Scores every point of `series` exactly once.
///
/// Non-overlapping windows cover the series; a leftover tail of `t < N`
/// points is scored by the final `N` points as one extra window, keeping
/// only its last `t` scores.
pub fn score_series(
    series: &TimeSeries,
    params: &ModelParams,
    criterion: Criterion,
    cfg: &DiscrepancyConfig,
) -> Result<ScoreSeries> {
    let n = params.config.window;
    if series.channels() != params.config.input_dim {
        return Err(Error::Incompatible {
            field: "input_dim".into(),
            message: format!(
                "series has {} channels, model expects {}",
                series.channels(),
                params.config.input_dim
            ),
        });
    }
    let layers = cfg.selected(params.config.layers)?;
    let mut out = ScoreSeries::default();
    for (id, w) in window_slices(series.len(), n, WindowMode::InferOverlapTail)?
        .into_iter()
        .enumerate()
    {
        let x = series.window(w.start, n)?;
        let fr = forward(&x, params)?;
        let s = window_score(&fr, &x, criterion, cfg)?;
        let k = w.keep_from;
        out.score.extend_from_slice(&s.score[k..]);
        out.recon.extend_from_slice(&s.recon[k..]);
        out.assdis_weight.extend_from_slice(&s.assdis_weight[k..]);
        out.assdis.extend_from_slice(&s.assdis[k..]);
        out.window_id.extend(std::iter::repeat(id).take(n - k));
        let (series_mean, sigma) = layer_mean(&fr, &layers)?;
        out.windows.push(WindowTrace {
            start: w.start,
            keep_from: k,
            series: series_mean,
            sigma,
        });
    }
    Ok(out)
}

/// How the decision threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdSpec {
    /// Flag a fraction `r` of the validation points.
    Ratio { r: f64 },
    /// Use `delta` verbatim.
    Fixed { delta: f64 },
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self::Ratio { r: 0.01 }
    }
}

impl ThresholdSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Ratio { r } if !(r > 0.0 && r < 1.0) => {
                Err(Error::Config(format!("threshold ratio must be in (0, 1), got {}", r)))
            }
            Self::Fixed { delta } if !delta.is_finite() => {
                Err(Error::Config("fixed threshold must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Threshold δ for `predict`.
///
/// Ratio mode sorts descending and returns the score at rank `⌊r·M⌋`, so
/// exactly `⌊r·M⌋` points lie strictly above it when scores are distinct.
/// Ties at δ are not flagged, so fewer points may be flagged.
pub fn select_threshold(val_scores: &[f64], spec: ThresholdSpec) -> Result<f64> {
    spec.validate()?;
    match spec {
        ThresholdSpec::Fixed { delta } => Ok(delta),
        ThresholdSpec::Ratio { r } => {
            if val_scores.is_empty() {
                return Err(Error::Contract("no validation scores".into()));
            }
            if val_scores.iter().any(|v| v.is_nan()) {
                return Err(Error::NonFinite("NaN validation score".into()));
            }
            let mut sorted = val_scores.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let k = ((r * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
            Ok(sorted[k])
        }
    }
}

pub fn predict(scores: &[f64], delta: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > delta)).collect()
}
