//! End-to-end run on in-memory splits: normalize, train, score, evaluate.

use crate::cli::RunConfig;
use crate::data::{normalize, NormStats, SynthSplits, TimeSeries};
use crate::detection::{score_series, Criterion, ScoreSeries};
use crate::error::{Error, Result};
use crate::evaluation::{contrast_statistic, Contrast, EvalReport};
use crate::model::ModelParams;
use crate::training::{fit, TrainLog};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub params: ModelParams,
    pub log: TrainLog,
    pub val: ScoreSeries,
    pub test: ScoreSeries,
    pub report: EvalReport,
    pub contrast: Contrast,
}

/// Normalized copies of the three splits plus the test labels.
pub struct Prepared {
    pub train: TimeSeries,
    pub val: TimeSeries,
    pub test: TimeSeries,
    pub truth: Vec<u8>,
}

pub fn prepare(splits: &SynthSplits, cfg: &RunConfig) -> Result<Prepared> {
    let truth = splits
        .test
        .labels
        .clone()
        .ok_or_else(|| Error::Contract("test split has no labels".into()))?;
    let norm = NormStats::fit(&splits.train);
    let prep = |s: &TimeSeries| if cfg.normalize { normalize(s, &norm) } else { Ok(s.clone()) };
    Ok(Prepared {
        train: prep(&splits.train)?,
        val: prep(&splits.val)?,
        test: prep(&splits.test)?,
        truth,
    })
}

/// Scores validation and test with `criterion` and evaluates against the labels.
pub fn assess(
    params: &ModelParams,
    data: &Prepared,
    cfg: &RunConfig,
    criterion: Criterion,
) -> Result<(ScoreSeries, ScoreSeries, EvalReport, Contrast)> {
    let val = score_series(&data.val, params, criterion, &cfg.discrepancy)?;
    let test = score_series(&data.test, params, criterion, &cfg.discrepancy)?;
    let contrast = contrast_statistic(&test, &data.truth, cfg.adj_width)?;
    let report = EvalReport::build(
        &test.score,
        &val.score,
        &data.truth,
        cfg.threshold,
        &cfg.r_grid,
        Some(contrast),
    )?;
    Ok((val, test, report, contrast))
}

/// Trains on `splits.train`, early-stops on `splits.val`, then scores and
/// evaluates `splits.test` against its labels.
pub fn run(splits: &SynthSplits, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = prepare(splits, cfg)?;
    let (params, log) = fit(&data.train, &data.val, &cfg.model, &cfg.train_config())?;
    let (val, test, report, contrast) = assess(&params, &data, cfg, cfg.criterion)?;
    Ok(Outcome {
        params,
        log,
        val,
        test,
        report,
        contrast,
    })
}
