//! Time series containers, synthetic anomaly generation, CSV I/O,
//! normalization and window slicing.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{rng_from_seed, Tensor};

/// An `M×d` series with optional per-point 0/1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub values: Tensor,
    pub labels: Option<Vec<u8>>,
    pub channel_names: Option<Vec<String>>,
}

impl TimeSeries {
    pub fn new(values: Tensor, labels: Option<Vec<u8>>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "series must be M×d, got {:?}",
                values.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != values.shape()[0] {
                return Err(Error::Shape(format!(
                    "{} labels for {} points",
                    l.len(),
                    values.shape()[0]
                )));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Contract("labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            values,
            labels,
            channel_names: None,
        })
    }

    /// Single-channel series from a slice.
    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::new(Tensor::new(vec![values.len(), 1], values.to_vec())?, None)
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    /// Rows `start..start + n` as an `n×d` tensor.
    pub fn window(&self, start: usize, n: usize) -> Result<Tensor> {
        if start + n > self.len() {
            return Err(Error::Shape(format!(
                "window {}..{} beyond series of {}",
                start,
                start + n,
                self.len()
            )));
        }
        let d = self.channels();
        Ok(Tensor::from_parts(
            vec![n, d],
            self.values.data()[start * d..(start + n) * d].to_vec(),
        ))
    }

    /// Values of one channel.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        let d = self.channels();
        self.values.data().iter().skip(c).step_by(d).copied().collect()
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    PointGlobal,
    PointContextual,
    PatternShapelet,
    PatternSeasonal,
    PatternTrend,
}

impl AnomalyKind {
    pub fn is_point(self) -> bool {
        matches!(self, Self::PointGlobal | Self::PointContextual)
    }

    /// Magnitude used when an event leaves it unset.
    pub fn default_magnitude(self) -> f64 {
        match self {
            Self::PointGlobal => 5.0,
            Self::PointContextual => 3.0,
            Self::PatternShapelet => 1.0,
            Self::PatternSeasonal => 2.0,
            Self::PatternTrend => 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSignal {
    pub components: Vec<Sinusoid>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub noise_std: f64,
}

/// One injected anomaly in the test split.
///
/// `magnitude` meaning per kind: point_global, k global stds from the clean
/// mean; point_contextual, k local stds from the centered moving average;
/// pattern_shapelet, square-wave amplitude as a multiple of the dominant
/// component's amplitude; pattern_seasonal, frequency multiplier;
/// pattern_trend, final drift in global stds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub start: usize,
    #[serde(default = "one")]
    pub length: usize,
    #[serde(default)]
    pub magnitude: Option<f64>,
    #[serde(default)]
    pub channel: usize,
}

fn one() -> usize {
    1
}

impl AnomalyEvent {
    pub fn new(kind: AnomalyKind, start: usize, length: usize) -> Self {
        Self {
            kind,
            start,
            length,
            magnitude: None,
            channel: 0,
        }
    }

    pub fn with_magnitude(mut self, m: f64) -> Self {
        self.magnitude = Some(m);
        self
    }

    pub fn end(&self) -> usize {
        self.start + self.length
    }

    fn magnitude(&self) -> f64 {
        self.magnitude.unwrap_or_else(|| self.kind.default_magnitude())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub base: BaseSignal,
    #[serde(default)]
    pub events: Vec<AnomalyEvent>,
    #[serde(default)]
    pub seed: u64,
}

/// Width of the centered moving window used by contextual anomalies.
pub const CONTEXT_WINDOW: usize = 20;

impl SynthSpec {
    /// The default laptop-scale benchmark: 2000/1000/2000 points, one
    /// channel, about 1.8% anomalous points spread over all five kinds.
    pub fn desk_default(seed: u64) -> Self {
        use AnomalyKind::*;
        // A slow component carries the range; a fast one gives every window
        // several periods to associate with. Contextual points sit at slow
        // crests and troughs, where the local spread is small.
        let events = vec![
            AnomalyEvent::new(PointGlobal, 130, 1),
            AnomalyEvent::new(PatternSeasonal, 260, 5),
            AnomalyEvent::new(PointContextual, 425, 1),
            AnomalyEvent::new(PatternShapelet, 560, 5),
            AnomalyEvent::new(PatternTrend, 720, 5),
            AnomalyEvent::new(PointGlobal, 905, 1),
            AnomalyEvent::new(PatternSeasonal, 1060, 5),
            AnomalyEvent::new(PointContextual, 1275, 1),
            AnomalyEvent::new(PatternShapelet, 1360, 5),
            AnomalyEvent::new(PatternTrend, 1530, 5),
            AnomalyEvent::new(PointGlobal, 1705, 1),
            AnomalyEvent::new(PointContextual, 1825, 1),
        ];
        Self {
            train_len: 2000,
            val_len: 1000,
            test_len: 2000,
            channels: 1,
            base: BaseSignal {
                components: vec![
                    Sinusoid {
                        amplitude: 1.0,
                        period: 100.0,
                        phase: 0.0,
                    },
                    Sinusoid {
                        amplitude: 0.4,
                        period: 10.0,
                        phase: 0.0,
                    },
                ],
                offset: 0.0,
                noise_std: 0.05,
            },
            events,
            seed,
        }
    }

    pub fn anomaly_points(&self) -> usize {
        self.events.iter().map(|e| e.length).sum()
    }

    pub fn anomaly_ratio(&self) -> f64 {
        if self.test_len == 0 {
            0.0
        } else {
            self.anomaly_points() as f64 / self.test_len as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_len == 0 || self.val_len == 0 || self.test_len == 0 || self.channels == 0 {
            return Err(Error::Spec("split lengths and channels must be positive".into()));
        }
        if self.base.components.is_empty() {
            return Err(Error::Spec("base signal needs at least one sinusoid".into()));
        }
        for (i, c) in self.base.components.iter().enumerate() {
            if !(c.period > 0.0) || !c.amplitude.is_finite() || !c.phase.is_finite() {
                return Err(Error::Spec(format!("sinusoid {} is invalid", i)));
            }
        }
        if !(self.base.noise_std >= 0.0) || !self.base.offset.is_finite() {
            return Err(Error::Spec("noise_std must be >= 0 and offset finite".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.length == 0 {
                return Err(Error::Spec(format!("event {} ({:?}) has zero length", i, e.kind)));
            }
            if e.kind.is_point() && e.length != 1 {
                return Err(Error::Spec(format!(
                    "event {} ({:?}) is a point anomaly but has length {}",
                    i, e.kind, e.length
                )));
            }
            if e.end() > self.test_len {
                return Err(Error::Spec(format!(
                    "event {} ({:?}) spans {}..{} beyond test length {}",
                    i,
                    e.kind,
                    e.start,
                    e.end(),
                    self.test_len
                )));
            }
            if e.channel >= self.channels {
                return Err(Error::Spec(format!(
                    "event {} targets channel {} of {}",
                    i, e.channel, self.channels
                )));
            }
            let m = e.magnitude();
            let ok = match e.kind {
                AnomalyKind::PointGlobal | AnomalyKind::PointContextual => m >= 3.0,
                _ => m > 0.0 && m.is_finite(),
            };
            if !ok {
                return Err(Error::Spec(format!(
                    "event {} ({:?}) has invalid magnitude {}",
                    i, e.kind, m
                )));
            }
        }
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        order.sort_by_key(|&i| (self.events[i].channel, self.events[i].start));
        for pair in order.windows(2) {
            let (a, b) = (&self.events[pair[0]], &self.events[pair[1]]);
            if a.channel == b.channel && b.start < a.end() {
                return Err(Error::Spec(format!(
                    "events {} ({:?} at {}..{}) and {} ({:?} at {}..{}) overlap",
                    pair[0],
                    a.kind,
                    a.start,
                    a.end(),
                    pair[1],
                    b.kind,
                    b.start,
                    b.end()
                )));
            }
        }
        Ok(())
    }
}

/// Train, validation and test splits produced by [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSplits {
    pub train: TimeSeries,
    pub val: TimeSeries,
    pub test: TimeSeries,
}

/// Phase shift between channels of a multichannel base signal.
const CHANNEL_PHASE_STEP: f64 = 0.7;

fn base_value(base: &BaseSignal, t: f64, channel: usize, freq_mult: f64) -> f64 {
    base.offset
        + base
            .components
            .iter()
            .map(|c| {
                let theta = std::f64::consts::TAU * freq_mult * t / c.period
                    + c.phase
                    + CHANNEL_PHASE_STEP * channel as f64;
                c.amplitude * theta.sin()
            })
            .sum::<f64>()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Moving-window mean and std centred on `t` over `CONTEXT_WINDOW` points.
pub fn local_context(values: &[f64], t: usize) -> (f64, f64) {
    let half = CONTEXT_WINDOW / 2;
    let lo = t.saturating_sub(half);
    let hi = (t + half).min(values.len());
    mean_std(&values[lo..hi])
}

/// Builds clean train/val splits and a labelled test split. Pure in `spec`.
///
/// Magnitudes of point anomalies are measured against the clean test
/// series (the same series generated with no events).
pub fn generate(spec: &SynthSpec) -> Result<SynthSplits> {
    spec.validate()?;
    let d = spec.channels;
    let total = spec.train_len + spec.val_len + spec.test_len;
    let mut rng = rng_from_seed(spec.seed);
    let noise = Normal::new(0.0, spec.base.noise_std.max(0.0))
        .map_err(|e| Error::Spec(format!("noise: {}", e)))?;
    let mut noise_at = vec![0.0; total * d];
    for v in noise_at.iter_mut() {
        *v = if spec.base.noise_std > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
    }
    let mut values = vec![0.0; total * d];
    for t in 0..total {
        for c in 0..d {
            values[t * d + c] = base_value(&spec.base, t as f64, c, 1.0) + noise_at[t * d + c];
        }
    }

    let test_off = spec.train_len + spec.val_len;
    let mut test: Vec<f64> = values[test_off * d..].to_vec();
    let mut labels = vec![0u8; spec.test_len];
    let mut arng = rng_from_seed(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let main_amp = spec
        .base
        .components
        .iter()
        .map(|c| c.amplitude.abs())
        .fold(0.0, f64::max);

    for (idx, e) in spec.events.iter().enumerate() {
        let c = e.channel;
        let clean: Vec<f64> = (0..spec.test_len).map(|t| values[(test_off + t) * d + c]).collect();
        let (g_mean, g_std) = mean_std(&clean);
        let g_min = clean.iter().copied().fold(f64::INFINITY, f64::min);
        let g_max = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = e.magnitude();
        for t in e.start..e.end() {
            labels[t] = 1;
        }
        match e.kind {
            AnomalyKind::PointGlobal => {
                let sign = if arng.random::<bool>() { 1.0 } else { -1.0 };
                test[e.start * d + c] = g_mean + sign * k * g_std;
            }
            AnomalyKind::PointContextual => {
                let (ma, ls) = local_context(&clean, e.start);
                let first = if arng.random::<bool>() { 1.0 } else { -1.0 };
                let placed = [first, -first]
                    .into_iter()
                    .map(|s| ma + s * k * ls)
                    .find(|v| *v >= g_min && *v <= g_max);
                match placed {
                    Some(v) if ls > 0.0 => test[e.start * d + c] = v,
                    _ => {
                        return Err(Error::Spec(format!(
                            "event {} (PointContextual at {}): {} local stds from the moving average leaves the global range",
                            idx, e.start, k
                        )))
                    }
                }
            }
            AnomalyKind::PatternShapelet => {
                let main = spec
                    .base
                    .components
                    .iter()
                    .max_by(|a, b| a.amplitude.abs().total_cmp(&b.amplitude.abs()))
                    .expect("validated non-empty");
                for t in e.start..e.end() {
                    let abs_t = (test_off + t) as f64;
                    let theta = std::f64::consts::TAU * abs_t / main.period
                        + main.phase
                        + CHANNEL_PHASE_STEP * c as f64;
                    let square = if theta.sin() >= 0.0 { 1.0 } else { -1.0 };
                    test[t * d + c] = spec.base.offset
                        + k * main_amp * square
                        + noise_at[(test_off + t) * d + c];
                }
            }
            AnomalyKind::PatternSeasonal => {
                for t in e.start..e.end() {
                    let abs_t = (test_off + t) as f64;
                    test[t * d + c] =
                        base_value(&spec.base, abs_t, c, k) + noise_at[(test_off + t) * d + c];
                }
            }
            AnomalyKind::PatternTrend => {
                for (step, t) in (e.start..e.end()).enumerate() {
                    let frac = (step + 1) as f64 / e.length as f64;
                    test[t * d + c] += k * g_std * frac;
                }
            }
        }
    }

    let split = |from: usize, len: usize| -> Tensor {
        Tensor::from_parts(vec![len, d], values[from * d..(from + len) * d].to_vec())
    };
    Ok(SynthSplits {
        train: TimeSeries::new(split(0, spec.train_len), None)?,
        val: TimeSeries::new(split(spec.train_len, spec.val_len), None)?,
        test: TimeSeries::new(
            Tensor::new(vec![spec.test_len, d], test)?,
            Some(labels),
        )?,
    })
}

// ---------------------------------------------------------------------------
// CSV

fn parse_err(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 0, format!("{:?}", other)),
        })
}

/// Reads a headerless numeric CSV, and optionally a one-column 0/1 label file.
pub fn load_csv(path: &Path, label_path: Option<&Path>) -> Result<TimeSeries> {
    let mut reader = csv_reader(path)?;
    let mut data = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(rows as u64 + 1, |p| p.line());
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {} columns, found {}", c, rec.len()),
                ))
            }
            _ => {}
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(path, line, format!("column {}: '{}' is not a number", j + 1, cell))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {}: non-finite value", j + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, 1, "file has no rows".into()))?;
    let values = Tensor::new(vec![rows, cols], data)?;
    let labels = match label_path {
        Some(lp) => {
            let labels = load_labels(lp)?;
            if labels.len() != rows {
                return Err(Error::Shape(format!(
                    "label file {} has {} rows but data file {} has {}",
                    lp.display(),
                    labels.len(),
                    path.display(),
                    rows
                )));
            }
            Some(labels)
        }
        None => None,
    };
    TimeSeries::new(values, labels)
}

/// Reads a single-column 0/1 label file. An empty file yields no labels.
pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(out.len() as u64 + 1, |p| p.line());
        if rec.len() != 1 {
            return Err(parse_err(path, line, format!("expected 1 column, found {}", rec.len())));
        }
        match rec[0].trim() {
            "0" => out.push(0),
            "1" => out.push(1),
            other => return Err(parse_err(path, line, format!("label '{}' is not 0 or 1", other))),
        }
    }
    Ok(out)
}

/// Shortest round-trip decimal form of every value, comma separated, LF endings.
pub fn series_to_csv(series: &TimeSeries) -> String {
    let d = series.channels();
    let mut out = String::with_capacity(series.values.numel() * 20);
    for row in series.values.data().chunks(d) {
        let line: Vec<String> = row.iter().map(|v| format!("{}", v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn labels_to_csv(labels: &[u8]) -> String {
    labels.iter().map(|l| format!("{}\n", l)).collect()
}

pub fn save_csv(series: &TimeSeries, path: &Path) -> Result<()> {
    write_atomic(path, series_to_csv(series).as_bytes())
}

pub fn save_labels(labels: &[u8], path: &Path) -> Result<()> {
    write_atomic(path, labels_to_csv(labels).as_bytes())
}

// ---------------------------------------------------------------------------
// Normalization

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel mean and population std of a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(series: &TimeSeries) -> Self {
        let (mean, std) = (0..series.channels())
            .map(|c| {
                let (m, s) = mean_std(&series.channel(c));
                (m, s.max(STD_FLOOR))
            })
            .unzip();
        Self { mean, std }
    }
}

/// `(x − mean) / max(std, floor)` per channel.
pub fn normalize(series: &TimeSeries, stats: &NormStats) -> Result<TimeSeries> {
    let d = series.channels();
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(Error::Incompatible {
            field: "channels".into(),
            message: format!("stats for {} channels, series has {}", stats.mean.len(), d),
        });
    }
    let data = series
        .values
        .data()
        .chunks(d)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, x)| (x - stats.mean[c]) / stats.std[c].max(STD_FLOOR))
        })
        .collect();
    let mut out = TimeSeries::new(Tensor::new(vec![series.len(), d], data)?, series.labels.clone())?;
    out.channel_names = series.channel_names.clone();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Windows

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Non-overlapping windows; a short tail is dropped.
    TrainDropTail,
    /// Non-overlapping windows plus, for a tail of `t < N` points, one
    /// extra window over the last `N` points that keeps only its last `t` scores.
    InferOverlapTail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSlice {
    pub start: usize,
    /// Offset inside the window of the first point this window owns.
    pub keep_from: usize,
}

pub fn window_slices(len: usize, window: usize, mode: WindowMode) -> Result<Vec<WindowSlice>> {
    if window == 0 || len < window {
        return Err(Error::Shape(format!(
            "series of {} points is shorter than one window of {}",
            len, window
        )));
    }
    let mut out: Vec<WindowSlice> = (0..len / window)
        .map(|k| WindowSlice {
            start: k * window,
            keep_from: 0,
        })
        .collect();
    let tail = len % window;
    if mode == WindowMode::InferOverlapTail && tail > 0 {
        out.push(WindowSlice {
            start: len - window,
            keep_from: window - tail,
        });
    }
    Ok(out)
}
