#![allow(dead_code)]

use anomaly_transformer::model::ModelConfig;
use anomaly_transformer::numerics::{rng_from_seed, Tensor};
use rand::Rng;

/// The small model used by gradient and detach checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        window: 8,
        input_dim: 2,
        d_model: 8,
        layers: 1,
        heads: 2,
        d_ff: 16,
        ..ModelConfig::default()
    }
}

pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

use anomaly_transformer::attention::{attention_forward, AttentionOutput};
use anomaly_transformer::detection::predict;
use anomaly_transformer::discrepancy::DiscrepancyConfig;
use anomaly_transformer::model::{forward_tape, ModelParams};
use anomaly_transformer::numerics::gradcheck::{central_difference, max_relative_error, STEP};
use anomaly_transformer::numerics::Tape;
use anomaly_transformer::training::{objective, TrainMode};

fn max_only_loss(params: &ModelParams, x: &Tensor, cfg: &DiscrepancyConfig) -> f64 {
    let tape = Tape::new();
    let w = params.weights.map(|t| tape.constant(t));
    let fv = forward_tape(&tape, x, &w, params, None).unwrap();
    objective(&fv, x, 3.0, TrainMode::MaxOnly, cfg).unwrap().objective.item()
}

/// Worst relative error over every parameter tensor of the tiny model, for
/// reconstruction minus λ·discrepancy (which reaches every group). Errors
/// out if some tensor receives no gradient at all.
pub fn model_gradient_error(seed: u64) -> Result<f64, String> {
    let cfg = DiscrepancyConfig::default();
    let params = ModelParams::init(&tiny_config(), seed).unwrap();
    let x = random_tensor(&[8, 2], 100 + seed, 1.5);

    let tape = Tape::new();
    let w = params.weights.map(|t| tape.param(t));
    let fv = forward_tape(&tape, &x, &w, &params, None).unwrap();
    let loss = objective(&fv, &x, 3.0, TrainMode::MaxOnly, &cfg).unwrap().objective;
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for ((name, var), (_, tensor)) in w.named().into_iter().zip(params.weights.named()) {
        let analytic = tape.grad(*var);
        if analytic.iter().all(|g| *g == 0.0) {
            return Err(format!("{} has no gradient", name));
        }
        let numeric = central_difference(
            |d| {
                let mut p = params.clone();
                let slot = p.weights.named_mut().into_iter().find(|(n, _)| *n == name).unwrap().1;
                slot.assign(d).unwrap();
                max_only_loss(&p, &x, &cfg)
            },
            tensor.data(),
            STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// One attention block on random hidden states.
pub fn random_block(seed: u64, window: usize, scale: f64) -> AttentionOutput {
    let cfg = ModelConfig {
        window,
        input_dim: 1,
        d_model: 8,
        layers: 1,
        heads: 2,
        d_ff: 8,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&cfg, seed).unwrap();
    let x = random_tensor(&[window, 8], seed ^ 0xabc, scale);
    attention_forward(&x, &params.weights.layers[0].attention, &cfg.attention()).unwrap()
}

/// Rows of P and S sum to one; prior rows peak at the diagonal, fall off
/// monotonically and are symmetric in distance.
pub fn check_maps(out: &AttentionOutput) -> Result<(), String> {
    let n = out.window();
    for m in 0..out.heads() {
        for i in 0..n {
            for row in [out.prior_row(m, i), out.series_row(m, i)] {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() >= 1e-6 || row.iter().any(|v| *v < 0.0) {
                    return Err(format!("head {} row {} sums to {}", m, i, s));
                }
            }
            let p = out.prior_row(m, i);
            for k in 1..n {
                if i + k < n && p[i + k] > p[i + k - 1] {
                    return Err(format!("prior not unimodal right of {}", i));
                }
                if i >= k && p[i - k] > p[i - k + 1] {
                    return Err(format!("prior not unimodal left of {}", i));
                }
                if i >= k && i + k < n {
                    let (a, b) = (p[i - k], p[i + k]);
                    if (a - b).abs() > 1e-12 * a.max(b).max(1e-300) {
                        return Err(format!("prior asymmetric at {}±{}", i, k));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn kl(p: &[f64], q: &[f64], floor: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let a = p[i].max(floor);
        let b = q[i].max(floor);
        s += a * (a / b).ln();
    }
    s
}

/// Head-mean both maps, symmetric KL per row, mean over layers.
pub fn naive_assoc_discrepancy(layers: &[AttentionOutput], floor: f64) -> Vec<f64> {
    let (h, n) = (layers[0].heads(), layers[0].window());
    (0..n)
        .map(|i| {
            let mut total = 0.0;
            for layer in layers {
                let mut p = vec![0.0; n];
                let mut s = vec![0.0; n];
                for m in 0..h {
                    for j in 0..n {
                        p[j] += layer.prior_row(m, i)[j] / h as f64;
                        s[j] += layer.series_row(m, i)[j] / h as f64;
                    }
                }
                total += kl(&p, &s, floor) + kl(&s, &p, floor);
            }
            total / layers.len() as f64
        })
        .collect()
}

pub fn random_bits(rng: &mut impl Rng, n: usize, p: f64) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random::<f64>() < p)).collect()
}

pub fn naive_point_adjust(pred: &[u8], truth: &[u8]) -> Vec<u8> {
    let mut out = pred.to_vec();
    for i in 0..truth.len() {
        if truth[i] == 0 {
            continue;
        }
        // walk out to the segment borders
        let mut s = i;
        while s > 0 && truth[s - 1] == 1 {
            s -= 1;
        }
        let mut e = i;
        while e + 1 < truth.len() && truth[e + 1] == 1 {
            e += 1;
        }
        if (s..=e).any(|k| pred[k] == 1) {
            out[i] = 1;
        }
    }
    out
}

/// Smallest validation score with at most `k` scores strictly above it and
/// more than `k` at or above, found by trying every candidate.
pub fn naive_threshold(val: &[f64], r: f64) -> f64 {
    let k = ((r * val.len() as f64).floor() as usize).min(val.len() - 1);
    let mut best = f64::INFINITY;
    for &c in val {
        let above = val.iter().filter(|&&v| v > c).count();
        let at_or_above = val.iter().filter(|&&v| v >= c).count();
        if above <= k && at_or_above > k {
            best = best.min(c);
        }
    }
    best
}

pub fn naive_auc(test: &[f64], truth: &[u8], val: &[f64], grid: &[f64]) -> f64 {
    let mut pts = vec![(0.0, 0.0), (1.0, 1.0)];
    for &r in grid {
        let delta = naive_threshold(val, r);
        let adj = naive_point_adjust(&predict(test, delta), truth);
        let pos = truth.iter().filter(|&&t| t == 1).count();
        let neg = truth.len() - pos;
        let tp = (0..truth.len()).filter(|&i| adj[i] == 1 && truth[i] == 1).count();
        let fp = (0..truth.len()).filter(|&i| adj[i] == 1 && truth[i] == 0).count();
        let tpr = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
        let fpr = if neg == 0 { 0.0 } else { fp as f64 / neg as f64 };
        pts.push((fpr, tpr));
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    for w in pts.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    area
}
