//! Point-adjusted metrics, ROC over a threshold-ratio grid, and the
//! adjacent-association contrast statistic.

use serde::{Deserialize, Serialize};

use crate::detection::{predict, select_threshold, ScoreSeries, ThresholdSpec};
use crate::error::{Error, Result};

/// Threshold ratios swept for the ROC curve.
pub const DEFAULT_R_GRID: [f64; 7] = [0.005, 0.01, 0.015, 0.02, 0.10, 0.20, 0.30];

/// Half-width of the band of neighbours counted as adjacent.
pub const DEFAULT_ADJ_WIDTH: usize = 10;

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("{}: {} predictions vs {} labels", what, a, b)))
    }
}

/// Maximal runs `[start, end)` of ones.
pub fn segments(truth: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < truth.len() {
        if truth[i] == 1 {
            let s = i;
            while i < truth.len() && truth[i] == 1 {
                i += 1;
            }
            out.push((s, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Marks a whole true segment detected when any point in it is flagged.
pub fn point_adjust(pred: &[u8], truth: &[u8]) -> Result<Vec<u8>> {
    same_len(pred.len(), truth.len(), "point_adjust")?;
    let mut out = pred.to_vec();
    for (s, e) in segments(truth) {
        if pred[s..e].iter().any(|&p| p == 1) {
            out[s..e].iter_mut().for_each(|v| *v = 1);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when nothing was predicted positive, so precision is reported as 0.
    pub precision_undefined: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of(pred: &[u8], truth: &[u8]) -> Result<Self> {
        same_len(pred.len(), truth.len(), "confusion")?;
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == 1, t == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn prf(pred: &[u8], truth: &[u8]) -> Result<Prf> {
    let c = Confusion::of(pred, truth)?;
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf {
        precision,
        recall,
        f1,
        precision_undefined: c.tp + c.fp == 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub r: f64,
    pub delta: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Area under the piecewise-linear curve through `(fpr, tpr)` points,
/// anchored at (0,0) and (1,1).
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts = Vec::with_capacity(points.len() + 2);
    pts.push((0.0, 0.0));
    pts.extend_from_slice(points);
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// ROC operating points (one per ratio) and their anchored trapezoidal AUC.
pub fn roc_auc(
    test_scores: &[f64],
    truth: &[u8],
    val_scores: &[f64],
    r_grid: &[f64],
) -> Result<(Vec<RocPoint>, f64)> {
    same_len(test_scores.len(), truth.len(), "roc_auc")?;
    if r_grid.is_empty() {
        return Err(Error::Config("empty threshold-ratio grid".into()));
    }
    let mut points = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let delta = select_threshold(val_scores, ThresholdSpec::Ratio { r })?;
        let adj = point_adjust(&predict(test_scores, delta), truth)?;
        let c = Confusion::of(&adj, truth)?;
        points.push(RocPoint {
            r,
            delta,
            fpr: c.fpr(),
            tpr: c.tpr(),
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    Ok((points, trapezoid_auc(&xy)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub abnormal_mean: Option<f64>,
    pub normal_mean: Option<f64>,
    pub ratio: Option<f64>,
    pub adj_width: usize,
}

/// Mean association weight each point gives its neighbours within
/// `width` steps, inside the window that scored it.
pub fn adjacent_weights(scores: &ScoreSeries, width: usize) -> Result<(Vec<f64>, usize)> {
    let mut out = Vec::with_capacity(scores.len());
    let mut used = width;
    for w in &scores.windows {
        let n = w.series.rows();
        if n < 2 * used + 1 {
            let shrunk = (n - 1) / 2;
            log::warn!(
                "window of {} too small for adjacency width {}; using {}",
                n,
                used,
                shrunk
            );
            used = shrunk;
        }
    }
    if used == 0 {
        return Err(Error::Config("window too small for any adjacency band".into()));
    }
    for w in &scores.windows {
        let n = w.series.rows();
        for i in w.keep_from..n {
            let lo = i.saturating_sub(used);
            let hi = (i + used).min(n - 1);
            let (mut sum, mut count) = (0.0, 0usize);
            for j in lo..=hi {
                if j != i {
                    sum += w.series.at(i, j);
                    count += 1;
                }
            }
            out.push(sum / count as f64);
        }
    }
    Ok((out, used))
}

/// Abnormal/normal means of per-point adjacent weights.
pub fn contrast_from_weights(weights: &[f64], truth: &[u8], adj_width: usize) -> Result<Contrast> {
    same_len(weights.len(), truth.len(), "contrast")?;
    let mean_where = |flag: u8| {
        let v: Vec<f64> = weights
            .iter()
            .zip(truth)
            .filter(|(_, &t)| t == flag)
            .map(|(w, _)| *w)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let abnormal_mean = mean_where(1);
    let normal_mean = mean_where(0);
    let ratio = match (abnormal_mean, normal_mean) {
        (Some(a), Some(n)) if n > 0.0 => Some(a / n),
        _ => None,
    };
    Ok(Contrast {
        abnormal_mean,
        normal_mean,
        ratio,
        adj_width,
    })
}

pub fn contrast_statistic(scores: &ScoreSeries, truth: &[u8], adj_width: usize) -> Result<Contrast> {
    let (w, used) = adjacent_weights(scores, adj_width)?;
    contrast_from_weights(&w, truth, used)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: ThresholdSpec,
    pub delta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub roc_points: Vec<RocPoint>,
    pub auc: f64,
    pub contrast: Option<Contrast>,
}

impl EvalReport {
    /// Thresholds test scores per `threshold`, point-adjusts, and sweeps `r_grid`.
    pub fn build(
        test_scores: &[f64],
        val_scores: &[f64],
        truth: &[u8],
        threshold: ThresholdSpec,
        r_grid: &[f64],
        contrast: Option<Contrast>,
    ) -> Result<Self> {
        same_len(test_scores.len(), truth.len(), "evaluation")?;
        let delta = select_threshold(val_scores, threshold)?;
        let adj = point_adjust(&predict(test_scores, delta), truth)?;
        let m = prf(&adj, truth)?;
        let (roc_points, auc) = roc_auc(test_scores, truth, val_scores, r_grid)?;
        Ok(Self {
            threshold,
            delta,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            precision_undefined: m.precision_undefined,
            roc_points,
            auc,
            contrast,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad report: {}", e)))
    }

    /// Fixed-width P/R/F1 table.
    pub fn table(&self, label: &str) -> String {
        let mut s = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
            "Method", "P", "R", "F1", "AUC"
        );
        s.push_str(&format!(
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
            label, self.precision, self.recall, self.f1, self.auc
        ));
        if let Some(c) = &self.contrast {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.4}", v));
            s.push_str(&format!(
                "contrast (W={}): abnormal {} normal {} ratio {}\n",
                c.adj_width,
                fmt(c.abnormal_mean),
                fmt(c.normal_mean),
                fmt(c.ratio)
            ));
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("r,delta,fpr,tpr\n");
        for p in &self.roc_points {
            s.push_str(&format!("{},{},{},{}\n", p.r, p.delta, p.fpr, p.tpr));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::WindowTrace;
    use crate::numerics::Tensor;

    #[test]
    fn adjust_examples() {
        assert_eq!(
            point_adjust(&[0, 0, 1, 0, 0], &[0, 1, 1, 1, 0]).unwrap(),
            vec![0, 1, 1, 1, 0]
        );
        assert_eq!(point_adjust(&[0; 5], &[0, 1, 1, 1, 0]).unwrap(), vec![0; 5]);
        assert!(point_adjust(&[0; 4], &[0; 5]).is_err());
    }

    #[test]
    fn prf_examples() {
        let m = prf(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        let m = prf(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = prf(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert!(m.precision_undefined);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn perfect_separation_auc_one() {
        let truth: Vec<u8> = (0..100).map(|i| u8::from(i % 10 == 0)).collect();
        let scores: Vec<f64> = truth.iter().map(|&t| if t == 1 { 10.0 } else { 0.1 }).collect();
        // every grid ratio lands on the validation plateau at 1.0
        let val: Vec<f64> = (0..100).map(|i| if i < 40 { 1.0 } else { 0.01 }).collect();
        let (_, auc) = roc_auc(&scores, &truth, &val, &DEFAULT_R_GRID).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn constant_scores_single_operating_point() {
        let truth = [0, 1, 0, 0];
        let (pts, auc) = roc_auc(&[1.0; 4], &truth, &[1.0; 4], &[0.1, 0.3]).unwrap();
        assert!(pts.iter().all(|p| p.fpr == 0.0 && p.tpr == 0.0));
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn trapezoid_by_hand() {
        // (0,0)->(0.5,0.8)->(1,1): 0.5*0.4 + 0.5*0.9
        let a = trapezoid_auc(&[(0.5, 0.8)]);
        assert!((a - 0.65).abs() < 1e-15);
    }

    fn trace(series: Tensor, keep_from: usize) -> WindowTrace {
        let n = series.rows();
        WindowTrace {
            start: 0,
            keep_from,
            series,
            sigma: vec![1.0; n],
        }
    }

    #[test]
    fn contrast_by_hand() {
        let s = Tensor::new(
            vec![4, 4],
            vec![
                0.1, 0.2, 0.3, 0.4, //
                0.5, 0.1, 0.2, 0.2, //
                0.25, 0.25, 0.25, 0.25, //
                0.0, 0.1, 0.6, 0.3,
            ],
        )
        .unwrap();
        let scores = ScoreSeries {
            score: vec![0.0; 4],
            recon: vec![0.0; 4],
            assdis_weight: vec![0.0; 4],
            assdis: vec![0.0; 4],
            window_id: vec![0; 4],
            windows: vec![trace(s, 0)],
        };
        let (w, used) = adjacent_weights(&scores, 1).unwrap();
        assert_eq!(used, 1);
        assert_eq!(w, vec![0.2, (0.5 + 0.2) / 2.0, (0.25 + 0.25) / 2.0, 0.6]);
        let c = contrast_from_weights(&w, &[0, 0, 0, 1], 1).unwrap();
        assert_eq!(c.abnormal_mean, Some(0.6));
        let c = contrast_from_weights(&w, &[0; 4], 1).unwrap();
        assert_eq!((c.abnormal_mean, c.ratio), (None, None));
    }

    #[test]
    fn uniform_maps_ratio_one() {
        let n = 30;
        let s = Tensor::new(vec![n, n], vec![1.0 / n as f64; n * n]).unwrap();
        let scores = ScoreSeries {
            windows: vec![trace(s, 0)],
            ..Default::default()
        };
        let truth: Vec<u8> = (0..n).map(|i| u8::from(i == 7)).collect();
        let c = contrast_statistic(&scores, &truth, DEFAULT_ADJ_WIDTH).unwrap();
        assert!((c.ratio.unwrap() - 1.0).abs() < 1e-12);
        assert!((c.normal_mean.unwrap() - 1.0 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn report_round_trip() {
        let truth = [0, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let scores = [0.0, 0.9, 0.5, 0.1, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0];
        let r = EvalReport::build(
            &scores,
            &scores,
            &truth,
            ThresholdSpec::Ratio { r: 0.1 },
            &DEFAULT_R_GRID,
            None,
        )
        .unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert!(r.table("model").contains("1.0000"));
    }
}
