//! Minimax association learning.
//!
//! Per batch the two phase losses are built on one tape:
//!
//! * minimize phase: `recon + λ·AssDis(P, detach(S))`, pulling the prior
//!   towards the series association;
//! * maximize phase: `recon − λ·AssDis(detach(P), S)`, pushing the series
//!   association away from the prior.
//!
//! One backward pass runs over `recon + λ·AssDis(P, detach(S)) − λ·AssDis(detach(P), S)`,
//! so the detach placement routes the opposing discrepancy gradients while
//! the reconstruction gradient is counted once.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{window_slices, TimeSeries, WindowMode};
use crate::discrepancy::{assoc_discrepancy, assoc_discrepancy_tape, DiscrepancyConfig, LayerMaps};
use crate::error::{Error, Result};
use crate::model::{forward, forward_tape, ForwardResult, ForwardVars, ModelConfig, ModelParams};
use crate::numerics::{rng_from_seed, AdamState, SeededRng, Tape, Tensor, Var};

/// How the discrepancy enters the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Two-phase objective with stop-gradients.
    #[default]
    Minimax,
    /// `recon − λ·AssDis(P, S)` with gradients through both maps.
    MaxOnly,
    /// Reconstruction only.
    ReconOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub discrepancy: DiscrepancyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            mode: TrainMode::Minimax,
            discrepancy: DiscrepancyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Values of both phase losses for one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseLosses {
    /// Mean squared error over all `N·d` entries.
    pub recon: f64,
    /// Mean over the window of the per-point discrepancy.
    pub assdis: f64,
    pub minimize: f64,
    pub maximize: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda must be >= 0, got {}", lambda)))
    }
}

/// Both phase losses from a finished forward pass.
pub fn phase_losses(
    fr: &ForwardResult,
    x: &Tensor,
    lambda: f64,
    cfg: &DiscrepancyConfig,
) -> Result<PhaseLosses> {
    check_lambda(lambda)?;
    if fr.x_hat.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} for window {:?}",
            fr.x_hat.shape(),
            x.shape()
        )));
    }
    let recon = x
        .data()
        .iter()
        .zip(fr.x_hat.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.numel() as f64;
    let dis = assoc_discrepancy(&fr.layers, cfg)?;
    let assdis = dis.iter().sum::<f64>() / dis.len() as f64;
    Ok(PhaseLosses {
        recon,
        assdis,
        minimize: recon + lambda * assdis,
        maximize: recon - lambda * assdis,
    })
}

/// Scalar terms of the training objective recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms<'t> {
    pub objective: Var<'t>,
    pub recon: Var<'t>,
    /// Discrepancy term of the minimize phase (series detached).
    pub minimize_dis: Var<'t>,
    /// Discrepancy term of the maximize phase (prior detached).
    pub maximize_dis: Var<'t>,
}

fn maps<'t>(fv: &ForwardVars<'t>, detach_prior: bool, detach_series: bool) -> Vec<LayerMaps<'t>> {
    let pick = |vs: &[Var<'t>], detach: bool| -> Vec<Var<'t>> {
        vs.iter().map(|v| if detach { v.detach() } else { *v }).collect()
    };
    fv.layers
        .iter()
        .map(|l| (pick(&l.prior, detach_prior), pick(&l.series, detach_series)))
        .collect()
}

/// Builds the objective for `mode` on the forward pass `fv` of window `x`.
pub fn objective<'t>(
    fv: &ForwardVars<'t>,
    x: &Tensor,
    lambda: f64,
    mode: TrainMode,
    cfg: &DiscrepancyConfig,
) -> Result<ObjectiveTerms<'t>> {
    check_lambda(lambda)?;
    let tape = fv.x_hat.tape();
    let recon = tape.constant(x).sub(fv.x_hat)?.square().mean();
    let minimize_dis = assoc_discrepancy_tape(&maps(fv, false, true), cfg)?.mean();
    let maximize_dis = assoc_discrepancy_tape(&maps(fv, true, false), cfg)?.mean();
    let objective = match mode {
        TrainMode::Minimax => recon
            .add(minimize_dis.scale(lambda))?
            .sub(maximize_dis.scale(lambda))?,
        TrainMode::MaxOnly => {
            let joint = assoc_discrepancy_tape(&maps(fv, false, false), cfg)?.mean();
            recon.sub(joint.scale(lambda))?
        }
        TrainMode::ReconOnly => recon,
    };
    Ok(ObjectiveTerms {
        objective,
        recon,
        minimize_dis,
        maximize_dis,
    })
}

/// Loss used for early stopping: the minimize-phase value for minimax
/// training, the mode's own objective otherwise.
pub fn validation_loss(losses: &PhaseLosses, mode: TrainMode, lambda: f64) -> f64 {
    match mode {
        TrainMode::Minimax => losses.minimize,
        TrainMode::MaxOnly => losses.recon - lambda * losses.assdis,
        TrainMode::ReconOnly => losses.recon,
    }
}

/// Mean losses over one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub objective: f64,
    pub recon: f64,
    pub assdis: f64,
}

/// Gradient of the batch-mean objective, accumulated into `params`.
///
/// Windows are processed in order on separate tapes; returns mean losses.
pub fn accumulate_gradients(
    batch: &[Tensor],
    params: &mut ModelParams,
    cfg: &TrainConfig,
    mut rng: Option<&mut SeededRng>,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut sums = StepLosses {
        objective: 0.0,
        recon: 0.0,
        assdis: 0.0,
    };
    for (b, x) in batch.iter().enumerate() {
        let tape = Tape::new();
        let w = params.weights.map(|t| tape.param(t));
        let fv = forward_tape(&tape, x, &w, params, rng.as_deref_mut())?;
        let terms = objective(&fv, x, cfg.lambda, cfg.mode, &cfg.discrepancy)?;
        let loss = terms.objective.scale(scale);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss on batch window {} (recon {}, minimize-phase discrepancy {}, maximize-phase discrepancy {})",
                b,
                terms.recon.item(),
                terms.minimize_dis.item(),
                terms.maximize_dis.item()
            )));
        }
        tape.backward(loss)?;
        let grads = w.map(|v| tape.grad(*v));
        for ((name, t), (_, g)) in params.weights.named_mut().into_iter().zip(grads.named()) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for {}", name)));
            }
            t.accumulate_grad(g)?;
        }
        sums.objective += terms.objective.item();
        sums.recon += terms.recon.item();
        sums.assdis += terms.minimize_dis.item();
    }
    Ok(StepLosses {
        objective: sums.objective * scale,
        recon: sums.recon * scale,
        assdis: sums.assdis * scale,
    })
}

/// One optimizer step on a batch of windows.
pub fn train_step(
    batch: &[Tensor],
    params: &mut ModelParams,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    rng: Option<&mut SeededRng>,
) -> Result<StepLosses> {
    params.zero_grad();
    let losses = accumulate_gradients(batch, params, cfg, rng)?;
    let mut named = params.weights.named_mut();
    let mut refs: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
    opt.step(&mut refs)?;
    params.zero_grad();
    Ok(losses)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon_loss: f64,
    pub assdis: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,recon_loss,assdis,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.recon_loss, e.assdis, e.val_loss));
        }
        out
    }
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
    epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// New best; keep these parameters.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            epoch: 0,
        }
    }

    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn windows_of(series: &TimeSeries, n: usize) -> Result<Vec<Tensor>> {
    window_slices(series.len(), n, WindowMode::TrainDropTail)?
        .iter()
        .map(|w| series.window(w.start, n))
        .collect()
}

/// Mean phase losses of `params` over non-overlapping windows of `series`.
pub fn evaluate_losses(
    series: &TimeSeries,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<PhaseLosses> {
    let windows = windows_of(series, params.config.window)?;
    let mut acc = PhaseLosses {
        recon: 0.0,
        assdis: 0.0,
        minimize: 0.0,
        maximize: 0.0,
    };
    for x in &windows {
        let l = phase_losses(&forward(x, params)?, x, cfg.lambda, &cfg.discrepancy)?;
        acc.recon += l.recon;
        acc.assdis += l.assdis;
        acc.minimize += l.minimize;
        acc.maximize += l.maximize;
    }
    let k = windows.len() as f64;
    Ok(PhaseLosses {
        recon: acc.recon / k,
        assdis: acc.assdis / k,
        minimize: acc.minimize / k,
        maximize: acc.maximize / k,
    })
}

/// Trains from scratch and returns the best-validation parameters.
pub fn fit(
    train: &TimeSeries,
    val: &TimeSeries,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    let params = ModelParams::init(model_cfg, cfg.seed)?;
    fit_from(params, train, val, cfg)
}

/// Trains starting from `params`.
pub fn fit_from(
    mut params: ModelParams,
    train: &TimeSeries,
    val: &TimeSeries,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    cfg.discrepancy.validate(params.config.layers)?;
    let n = params.config.window;
    for (name, s) in [("train", train), ("validation", val)] {
        if s.channels() != params.config.input_dim {
            return Err(Error::Incompatible {
                field: "input_dim".into(),
                message: format!(
                    "{} series has {} channels, model expects {}",
                    name,
                    s.channels(),
                    params.config.input_dim
                ),
            });
        }
    }
    let windows = windows_of(train, n)?;
    windows_of(val, n)?;

    let mut opt = AdamState::new(cfg.learning_rate);
    let mut rng = rng_from_seed(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut recon, mut assdis, mut seen) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Tensor> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let dropout_rng = if params.config.dropout > 0.0 {
                Some(&mut rng)
            } else {
                None
            };
            let step = train_step(&batch, &mut params, &mut opt, cfg, dropout_rng)?;
            recon += step.recon * batch.len() as f64;
            assdis += step.assdis * batch.len() as f64;
            seen += batch.len();
        }
        let v = evaluate_losses(val, &params, cfg)?;
        let val_loss = validation_loss(&v, cfg.mode, cfg.lambda);
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {}", epoch)));
        }
        let entry = EpochLog {
            epoch,
            recon_loss: recon / seen as f64,
            assdis: assdis / seen as f64,
            val_loss,
        };
        log::info!(
            "epoch {}: recon {:.6} assdis {:.6} val {:.6}",
            epoch,
            entry.recon_loss,
            entry.assdis,
            entry.val_loss
        );
        log.epochs.push(entry);
        match stopper.update(val_loss) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stopper.best_epoch();
    Ok((best, log))
}
