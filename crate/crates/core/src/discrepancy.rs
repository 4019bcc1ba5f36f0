//! Association discrepancy between prior and series maps.
//!
//! Maps are first averaged over heads, then compared row by row with the
//! configured statistical distance, then averaged over the selected layers.
//! The value-level functions and the tape functions evaluate the same
//! formulas; the training module uses the tape versions.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionOutput;
use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `KL(p‖q) + KL(q‖p)`.
    #[default]
    SymKl,
    /// Jensen–Shannon divergence.
    Jsd,
    /// `−Σ p ln q`.
    CrossEntropy,
    /// Squared Euclidean distance.
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscrepancyConfig {
    pub metric: Metric,
    /// Zero-based layer indices; `None` selects every layer.
    pub layers: Option<Vec<usize>>,
    pub prob_floor: f64,
}

impl Default for DiscrepancyConfig {
    fn default() -> Self {
        Self {
            metric: Metric::SymKl,
            layers: None,
            prob_floor: 1e-12,
        }
    }
}

impl DiscrepancyConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(self.prob_floor > 0.0) {
            return Err(Error::Config("prob_floor must be > 0".into()));
        }
        if let Some(sel) = &self.layers {
            if sel.is_empty() {
                return Err(Error::Config("empty layer selection".into()));
            }
            if let Some(bad) = sel.iter().find(|&&l| l >= num_layers) {
                return Err(Error::Config(format!(
                    "layer {} selected but the model has {}",
                    bad, num_layers
                )));
            }
        }
        Ok(())
    }

    pub fn selected(&self, num_layers: usize) -> Result<Vec<usize>> {
        self.validate(num_layers)?;
        Ok(match &self.layers {
            Some(sel) => sel.clone(),
            None => (0..num_layers).collect(),
        })
    }
}

fn check_distribution(p: &[f64], which: &str) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Contract(format!("{} has entry {}", which, v)));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("{} sums to {}", which, s)));
    }
    Ok(())
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")
}

/// `Σ p ln(p/q) + Σ q ln(q/p)` with entries clamped at `floor`.
pub fn row_sym_kl(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .map(|(a, b)| {
            let (a, b) = (a.max(floor), b.max(floor));
            (a - b) * (a.ln() - b.ln())
        })
        .sum())
}

/// `½ KL(p‖m) + ½ KL(q‖m)` with `m = (p+q)/2`, entries clamped at `floor`.
pub fn jsd(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .map(|(a, b)| {
            let m = (0.5 * (a + b)).max(floor);
            let (a, b) = (a.max(floor), b.max(floor));
            0.5 * a * (a.ln() - m.ln()) + 0.5 * b * (b.ln() - m.ln())
        })
        .sum())
}

/// `−Σ p ln q` with `q` clamped at `floor`.
pub fn cross_entropy(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    check_pair(p, q)?;
    Ok(-p.iter().zip(q).map(|(a, b)| a * b.max(floor).ln()).sum::<f64>())
}

pub fn l2(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum())
}

pub fn metric_value(metric: Metric, p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    match metric {
        Metric::SymKl => row_sym_kl(p, q, floor),
        Metric::Jsd => jsd(p, q, floor),
        Metric::CrossEntropy => cross_entropy(p, q, floor),
        Metric::L2 => l2(p, q),
    }
}

/// Averages a `heads×N×N` stack into one `N×N` map.
pub fn head_mean(maps: &Tensor) -> Result<Tensor> {
    let shape = maps.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::Shape(format!("head stack {:?}", shape)));
    }
    let (h, n) = (shape[0], shape[1]);
    let mut out = vec![0.0; n * n];
    for head in maps.data().chunks(n * n) {
        out.iter_mut().zip(head).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|v| *v /= h as f64);
    Ok(Tensor::from_parts(vec![n, n], out))
}

/// Per-point discrepancy of a single layer.
pub fn layer_discrepancy(layer: &AttentionOutput, cfg: &DiscrepancyConfig) -> Result<Vec<f64>> {
    let p = head_mean(&layer.prior)?;
    let s = head_mean(&layer.series)?;
    (0..p.rows())
        .map(|i| metric_value(cfg.metric, p.row(i), s.row(i), cfg.prob_floor))
        .collect()
}

/// Per-point association discrepancy averaged over the selected layers.
pub fn assoc_discrepancy(layers: &[AttentionOutput], cfg: &DiscrepancyConfig) -> Result<Vec<f64>> {
    let selected = cfg.selected(layers.len())?;
    let mut acc: Option<Vec<f64>> = None;
    for &l in &selected {
        let d = layer_discrepancy(&layers[l], cfg)?;
        match acc.as_mut() {
            Some(a) => a.iter_mut().zip(&d).for_each(|(x, y)| *x += y),
            None => acc = Some(d),
        }
    }
    let mut out = acc.ok_or_else(|| Error::Config("empty layer selection".into()))?;
    let k = selected.len() as f64;
    out.iter_mut().for_each(|v| *v /= k);
    Ok(out)
}

fn mean_of<'t>(maps: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc = maps[0];
    for m in &maps[1..] {
        acc = acc.add(*m)?;
    }
    Ok(acc.scale(1.0 / maps.len() as f64))
}

/// Row-wise metric on the tape: `N×N, N×N → N×1`.
pub fn metric_rows<'t>(p: Var<'t>, q: Var<'t>, metric: Metric, floor: f64) -> Result<Var<'t>> {
    Ok(match metric {
        Metric::SymKl => {
            let (pc, qc) = (p.clamp_min(floor), q.clamp_min(floor));
            pc.sub(qc)?.mul(pc.ln().sub(qc.ln())?)?.row_sum()
        }
        Metric::Jsd => {
            let m = p.add(q)?.scale(0.5).clamp_min(floor);
            let (pc, qc) = (p.clamp_min(floor), q.clamp_min(floor));
            let lm = m.ln();
            let kp = pc.mul(pc.ln().sub(lm)?)?;
            let kq = qc.mul(qc.ln().sub(lm)?)?;
            kp.add(kq)?.scale(0.5).row_sum()
        }
        Metric::CrossEntropy => p.mul(q.clamp_min(floor).ln())?.row_sum().scale(-1.0),
        Metric::L2 => p.sub(q)?.square().row_sum(),
    })
}

/// Per-layer (prior heads, series heads) handles.
pub type LayerMaps<'t> = (Vec<Var<'t>>, Vec<Var<'t>>);

/// Tape version of [`assoc_discrepancy`], returning an `N×1` var.
pub fn assoc_discrepancy_tape<'t>(layers: &[LayerMaps<'t>], cfg: &DiscrepancyConfig) -> Result<Var<'t>> {
    let selected = cfg.selected(layers.len())?;
    let mut acc: Option<Var<'t>> = None;
    for &l in &selected {
        let (prior, series) = &layers[l];
        if prior.is_empty() || prior.len() != series.len() {
            return Err(Error::Shape(format!(
                "layer {} has {} prior and {} series heads",
                l,
                prior.len(),
                series.len()
            )));
        }
        let d = metric_rows(mean_of(prior)?, mean_of(series)?, cfg.metric, cfg.prob_floor)?;
        acc = Some(match acc {
            Some(a) => a.add(d)?,
            None => d,
        });
    }
    let total = acc.ok_or_else(|| Error::Config("empty layer selection".into()))?;
    Ok(total.scale(1.0 / selected.len() as f64))
}
