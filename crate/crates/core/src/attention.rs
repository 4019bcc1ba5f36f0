//! Anomaly-Attention: a two-branch attention block.
//!
//! The prior branch turns a learned per-point scale into a distance kernel
//! that concentrates on adjacent time points; the series branch is ordinary
//! scaled dot-product attention. Both are row-stochastic `N×N` maps per head,
//! and only the series branch is used to mix values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Gaussian,
    /// `(|j−i| + 1)^(−α)` with the scale channel read as α.
    PowerLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub sigma_floor: f64,
    pub prior_kind: PriorKind,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 {
            return Err(Error::Config("d_model and heads must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config(format!(
                "sigma_floor must be > 0, got {}",
                self.sigma_floor
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Squared relative distances `(j − i)²` for a window of `n` points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
}

impl DistanceMatrix {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let d = j as f64 - i as f64;
        d * d
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (j as f64 - i as f64).powi(2)))
            .collect();
        Tensor::from_parts(vec![self.n, self.n], data)
    }
}

/// Learnable weights of one Anomaly-Attention block.
///
/// Generic over the storage so the same layout serves parameter tensors and
/// their tape handles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    /// `d_model × heads`: one scale channel per head.
    pub w_sigma: T,
    pub w_out: T,
    pub b_out: T,
}

impl<T> AttentionWeights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> AttentionWeights<U> {
        AttentionWeights {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_sigma: f(&self.w_sigma),
            w_out: f(&self.w_out),
            b_out: f(&self.b_out),
        }
    }

    pub fn named(&self) -> [(&'static str, &T); 6] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_sigma", &self.w_sigma),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut T); 6] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_sigma", &mut self.w_sigma),
            ("w_out", &mut self.w_out),
            ("b_out", &mut self.b_out),
        ]
    }
}

/// Tape handles produced by one attention block.
#[derive(Clone, Debug)]
pub struct AttentionVars<'t> {
    pub z_hat: Var<'t>,
    /// One `N×N` prior map per head.
    pub prior: Vec<Var<'t>>,
    /// One `N×N` series map per head.
    pub series: Vec<Var<'t>>,
    /// `N×heads` positive scales.
    pub sigma: Var<'t>,
}

/// Values of one attention block: `prior`/`series` are `heads×N×N`, `sigma` is `N×heads`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub z_hat: Tensor,
    pub prior: Tensor,
    pub series: Tensor,
    pub sigma: Tensor,
}

impl AttentionOutput {
    pub fn heads(&self) -> usize {
        self.prior.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.prior.shape()[1]
    }

    /// Row `i` of head `m` in the prior map.
    pub fn prior_row(&self, m: usize, i: usize) -> &[f64] {
        map_row(&self.prior, m, i)
    }

    pub fn series_row(&self, m: usize, i: usize) -> &[f64] {
        map_row(&self.series, m, i)
    }
}

fn map_row(t: &Tensor, m: usize, i: usize) -> &[f64] {
    let n = t.shape()[1];
    &t.data()[(m * n + i) * n..(m * n + i + 1) * n]
}

/// Stacks per-head `N×N` maps into a `heads×N×N` tensor.
pub(crate) fn stack_heads(maps: &[Var<'_>]) -> Tensor {
    let n = maps[0].shape()[0];
    let data = maps.iter().flat_map(|m| m.value().into_data()).collect();
    Tensor::from_parts(vec![maps.len(), n, n], data)
}

impl AttentionVars<'_> {
    pub fn to_output(&self) -> AttentionOutput {
        AttentionOutput {
            z_hat: self.z_hat.value(),
            prior: stack_heads(&self.prior),
            series: stack_heads(&self.series),
            sigma: self.sigma.value(),
        }
    }
}

/// `Q, K, V = x·W_{Q,K,V}` and the raw scale channels `x·W_σ`.
pub fn project_qkvs<'t>(
    x: Var<'t>,
    w: &AttentionWeights<Var<'t>>,
) -> Result<(Var<'t>, Var<'t>, Var<'t>, Var<'t>)> {
    Ok((
        x.matmul(w.w_q)?,
        x.matmul(w.w_k)?,
        x.matmul(w.w_v)?,
        x.matmul(w.w_sigma)?,
    ))
}

/// `softplus(raw) + floor`, strictly positive.
pub fn sigma_transform<'t>(raw: Var<'t>, sigma_floor: f64) -> Var<'t> {
    raw.softplus().add_scalar(sigma_floor)
}

/// Row-rescaled prior maps, one per scale column.
pub fn compute_prior<'t>(
    sigma: Var<'t>,
    dist: DistanceMatrix,
    kind: PriorKind,
) -> Result<Vec<Var<'t>>> {
    let shape = sigma.shape();
    if shape.len() != 2 || shape[0] != dist.len() {
        return Err(Error::Shape(format!(
            "sigma {:?} for window of {}",
            shape,
            dist.len()
        )));
    }
    (0..shape[1])
        .map(|m| {
            let col = sigma.cols(m, m + 1)?;
            let kernel = match kind {
                PriorKind::Gaussian => col.gaussian_kernel()?,
                PriorKind::PowerLaw => col.power_kernel()?,
            };
            kernel.row_normalize()
        })
        .collect()
}

/// Per-head `softmax(√(h/d_model) · Q_m K_mᵀ)`.
pub fn compute_series<'t>(q: Var<'t>, k: Var<'t>, heads: usize) -> Result<Vec<Var<'t>>> {
    let d_model = q.shape()[1];
    if heads == 0 || d_model % heads != 0 || k.shape() != q.shape() {
        return Err(Error::Shape(format!(
            "series for Q {:?}, K {:?}, {} heads",
            q.shape(),
            k.shape(),
            heads
        )));
    }
    let dh = d_model / heads;
    let scale = (heads as f64 / d_model as f64).sqrt();
    (0..heads)
        .map(|m| {
            let qm = q.cols(m * dh, (m + 1) * dh)?;
            let km = k.cols(m * dh, (m + 1) * dh)?;
            Ok(qm.matmul(km.t()?)?.scale(scale).softmax_rows())
        })
        .collect()
}

/// `concat_m(S_m · V_m) · W_out + b_out`.
pub fn attend<'t>(series: &[Var<'t>], v: Var<'t>, w_out: Var<'t>, b_out: Var<'t>) -> Result<Var<'t>> {
    let heads = series.len();
    let d_model = v.shape()[1];
    if heads == 0 || d_model % heads != 0 {
        return Err(Error::Shape(format!(
            "attend {} heads over V {:?}",
            heads,
            v.shape()
        )));
    }
    let dh = d_model / heads;
    let mixed = series
        .iter()
        .enumerate()
        .map(|(m, s)| s.matmul(v.cols(m * dh, (m + 1) * dh)?))
        .collect::<Result<Vec<_>>>()?;
    Var::concat_cols(&mixed)?.matmul(w_out)?.add_row(b_out)
}

/// Full Anomaly-Attention block on an `N×d_model` input.
pub fn anomaly_attention<'t>(
    x: Var<'t>,
    w: &AttentionWeights<Var<'t>>,
    cfg: &AttentionConfig,
) -> Result<AttentionVars<'t>> {
    let n = x.shape()[0];
    let (q, k, v, raw) = project_qkvs(x, w)?;
    let sigma = sigma_transform(raw, cfg.sigma_floor);
    let prior = compute_prior(sigma, DistanceMatrix::new(n), cfg.prior_kind)?;
    let series = compute_series(q, k, cfg.heads)?;
    let z_hat = attend(&series, v, w.w_out, w.b_out)?;
    Ok(AttentionVars {
        z_hat,
        prior,
        series,
        sigma,
    })
}

/// Evaluates the block on values only.
pub fn attention_forward(
    x: &Tensor,
    w: &AttentionWeights<Tensor>,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    cfg.validate()?;
    let tape = Tape::new();
    let wv = w.map(|t| tape.constant(t));
    Ok(anomaly_attention(tape.constant(x), &wv, cfg)?.to_output())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_init, InitScheme};

    fn col<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
        tape.constant(&Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap())
    }

    #[test]
    fn sigma_transform_examples() {
        let tape = Tape::new();
        let s = sigma_transform(col(&tape, &[0.0, -50.0, 10.0]), 1e-4).value();
        assert!((s.data()[0] - (2f64.ln() + 1e-4)).abs() < 1e-12);
        assert!((s.data()[0] - 0.6932).abs() < 1e-4);
        assert!((s.data()[1] - 1e-4).abs() < 1e-12);
        assert!((s.data()[2] - 10.0001).abs() < 1e-4);
    }

    #[test]
    fn gaussian_prior_middle_row() {
        let tape = Tape::new();
        let p = compute_prior(col(&tape, &[1.0, 1.0, 1.0]), DistanceMatrix::new(3), PriorKind::Gaussian)
            .unwrap();
        let row = p[0].value().row(1).to_vec();
        // G(1) = 0.2420, G(0) = 0.3989 → rescaled over 0.8829
        let g0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let g1 = g0 * (-0.5f64).exp();
        assert!((g0 - 0.3989).abs() < 1e-4 && (g1 - 0.2420).abs() < 1e-4);
        let total = g0 + 2.0 * g1;
        assert!((row[0] - g1 / total).abs() < 1e-12);
        assert!((row[1] - g0 / total).abs() < 1e-12);
        assert!((row[0] - 0.2741).abs() < 1e-4 && (row[1] - 0.4519).abs() < 1e-4);
    }

    #[test]
    fn wide_sigma_is_flat_narrow_sigma_is_local() {
        let tape = Tape::new();
        let p = compute_prior(col(&tape, &[1e6; 7]), DistanceMatrix::new(7), PriorKind::Gaussian)
            .unwrap();
        for v in p[0].value().data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-6);
        }
        let p = compute_prior(col(&tape, &[0.1; 11]), DistanceMatrix::new(11), PriorKind::Gaussian)
            .unwrap();
        let row = p[0].value().row(5).to_vec();
        assert!(row[4] + row[5] + row[6] > 0.999);
    }

    #[test]
    fn power_law_prior_is_rescaled_and_unimodal() {
        let tape = Tape::new();
        let p = compute_prior(col(&tape, &[1.5; 6]), DistanceMatrix::new(6), PriorKind::PowerLaw)
            .unwrap()[0]
            .value();
        for i in 0..6 {
            let row = p.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((row[i] / row[(i + 1) % 6] - 2f64.powf(1.5)).abs() < 1e-9 || i == 5);
        }
    }

    #[test]
    fn series_examples() {
        let tape = Tape::new();
        let zero = tape.constant(&Tensor::zeros(&[4, 2]));
        let s = compute_series(zero, zero, 2).unwrap();
        for v in s[1].value().data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let q = col(&tape, &[1.0, 0.0]);
        let k = col(&tape, &[3f64.ln(), 0.0]);
        let s = compute_series(q, k, 1).unwrap()[0].value();
        assert!((s.at(0, 0) - 0.75).abs() < 1e-12);
        assert!((s.at(0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identity_series_passes_values() {
        let tape = Tape::new();
        let v = tape.constant(&seeded_init(&[3, 4], 1, InitScheme::UniformFan));
        let eye = tape.constant(&Tensor::eye(3));
        let w = tape.constant(&Tensor::eye(4));
        let b = tape.constant(&Tensor::zeros(&[4]));
        let out = attend(&[eye, eye], v, w, b).unwrap();
        assert_eq!(out.value(), v.value());
    }

    #[test]
    fn constant_values_stay_constant() {
        let tape = Tape::new();
        let v = tape.constant(&Tensor::new(vec![3, 2], vec![2.0, -1.0, 2.0, -1.0, 2.0, -1.0]).unwrap());
        let s = tape.constant(&seeded_init(&[3, 3], 9, InitScheme::UniformFan)).softmax_rows();
        let w = tape.constant(&Tensor::eye(2));
        let b = tape.constant(&Tensor::zeros(&[2]));
        let out = attend(&[s], v, w, b).unwrap().value();
        for i in 0..3 {
            assert!((out.at(i, 0) - 2.0).abs() < 1e-12);
            assert!((out.at(i, 1) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AttentionConfig {
            d_model: 6,
            heads: 4,
            sigma_floor: 1e-4,
            prior_kind: PriorKind::Gaussian,
        };
        assert!(cfg.validate().is_err());
        cfg.heads = 3;
        assert!(cfg.validate().is_ok());
        cfg.sigma_floor = 0.0;
        assert!(cfg.validate().is_err());
    }
}
