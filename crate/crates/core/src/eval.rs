//! Detection metrics: max-so-far ROC-AUC, confusion rates under a band,
//! detection time, alpha sweeps and grid search.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::conformal::{detect, fit_band, BandConfig, ConformalBand};
use crate::trace::ScoreTrace;
use crate::{Error, Result};

/// Running maximum `max_{tau <= t} s_tau`.
pub fn max_so_far(trace: &ScoreTrace) -> ScoreTrace {
    let mut best = f64::NEG_INFINITY;
    let values = trace
        .values
        .iter()
        .map(|&v| {
            best = best.max(v);
            best
        })
        .collect();
    ScoreTrace::new(trace.rollout_id.clone(), values, trace.method_tag.clone())
}

/// Final max-so-far value `max_t s_t`.
pub fn final_max(trace: &ScoreTrace) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Empty("score trace"));
    }
    Ok(trace.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Mann-Whitney ROC-AUC with average ranks for ties. `labels[i]` is true for
/// failures (positives).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidData("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("ROC-AUC"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares their mean.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC-AUC on the final max-so-far score of each trace.
pub fn roc_auc_of_traces(traces: &[ScoreTrace], labels: &[bool]) -> Result<f64> {
    let finals = traces.iter().map(final_max).collect::<Result<Vec<_>>>()?;
    roc_auc(&finals, labels)
}

/// Metrics for one split. Fields that need a class absent from the split are
/// `None` rather than made up.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub split_tag: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub tp: usize,
    pub fp: usize,
    pub roc_auc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub bal_acc: Option<f64>,
    /// Mean relative detection time over failures; 1 for undetected ones.
    pub t_det: Option<f64>,
}

impl EvalReport {
    pub fn fn_count(&self) -> usize {
        self.n_pos - self.tp
    }

    pub fn tn(&self) -> usize {
        self.n_neg - self.fp
    }
}

/// Runs [`detect`] on every trace and tallies the confusion rates. ROC-AUC is
/// filled from the same traces' max-so-far finals when both classes exist.
pub fn confusion_under_band(
    traces: &[ScoreTrace],
    labels: &[bool],
    band: &ConformalBand,
    split_tag: &str,
) -> Result<EvalReport> {
    if traces.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    if traces.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: traces.len(),
            got: labels.len(),
        });
    }
    let (mut tp, mut fp, mut n_pos, mut t_sum) = (0usize, 0usize, 0usize, 0.0);
    for (trace, &failed) in traces.iter().zip(labels) {
        let d = detect(band, trace);
        if failed {
            n_pos += 1;
            t_sum += d.relative_time;
            tp += d.detected as usize;
        } else {
            fp += d.detected as usize;
        }
    }
    let n_neg = traces.len() - n_pos;
    let rate = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
    let tpr = rate(tp, n_pos);
    let fpr = rate(fp, n_neg);
    let tnr = fpr.map(|f| 1.0 - f);
    let roc = if n_pos > 0 && n_neg > 0 {
        Some(roc_auc_of_traces(traces, labels)?)
    } else {
        None
    };
    Ok(EvalReport {
        split_tag: split_tag.into(),
        n_pos,
        n_neg,
        tp,
        fp,
        roc_auc: roc,
        tpr,
        fpr,
        tnr,
        bal_acc: tpr.zip(tnr).map(|(a, b)| (a + b) / 2.0),
        t_det: (n_pos > 0).then(|| t_sum / n_pos as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub alpha: f64,
    pub bal_acc: Option<f64>,
    pub t_det: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

/// One band per alpha, calibrated on the successful calibration traces only,
/// then evaluated on the test traces.
pub fn alpha_sweep(
    calibration: &[ScoreTrace],
    calibration_labels: &[bool],
    test: &[ScoreTrace],
    test_labels: &[bool],
    alphas: &[f64],
    base: &BandConfig,
) -> Result<SweepCurve> {
    if alphas.is_empty() {
        return Err(Error::Empty("alpha list"));
    }
    if alphas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!("alphas must be strictly increasing: {alphas:?}")));
    }
    if calibration.len() != calibration_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: calibration.len(),
            got: calibration_labels.len(),
        });
    }
    let succ: Vec<ScoreTrace> = calibration
        .iter()
        .zip(calibration_labels)
        .filter(|(_, &f)| !f)
        .map(|(t, _)| t.clone())
        .collect();
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let band = fit_band(&succ, &BandConfig { alpha, ..*base })?;
        let r = confusion_under_band(test, test_labels, &band, "sweep")?;
        points.push(SweepPoint {
            alpha,
            bal_acc: r.bal_acc,
            t_det: r.t_det,
            tpr: r.tpr,
            fpr: r.fpr,
        });
    }
    Ok(SweepCurve { points })
}

/// Every configuration with its objective, plus the winner.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult<C> {
    pub best_index: usize,
    pub table: Vec<(C, f64)>,
}

impl<C> GridResult<C> {
    pub fn best(&self) -> &C {
        &self.table[self.best_index].0
    }

    pub fn best_score(&self) -> f64 {
        self.table[self.best_index].1
    }
}

/// Exhaustive search maximizing `objective`; the first configuration wins
/// ties. NaN objectives never win.
pub fn grid_search<C: Clone>(grid: &[C], mut objective: impl FnMut(&C) -> Result<f64>) -> Result<GridResult<C>> {
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best_index = 0;
    for (i, c) in grid.iter().enumerate() {
        let v = objective(c)?;
        let better = match table.get(best_index) {
            None => true,
            Some(&(_, b)) => v > b || (b.is_nan() && !v.is_nan()),
        };
        if better {
            best_index = i;
        }
        table.push((c.clone(), v));
    }
    Ok(GridResult { best_index, table })
}
