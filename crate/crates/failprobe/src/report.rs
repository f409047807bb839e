//! CSV outputs. Every file starts with a header row; undefined metrics are
//! written as empty cells.

use std::path::Path;

use failprobe_core::aggregation::{AggregationSpec, AxisAggregation};
use failprobe_core::eval::{EvalReport, SweepCurve};
use failprobe_core::pipeline::DetectorConfig;

use crate::error::FileError;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Buffered CSV table written in one go.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), FileError> {
        let err = |e: csv::Error| FileError::schema(path, None, e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| FileError::io(path, e))
    }
}

pub fn eval_table(reports: &[(EvalReport, f64)], method: &str) -> Table {
    let mut t = Table::new(&[
        "method", "split", "alpha", "n_pos", "n_neg", "tp", "fp", "roc_auc", "tpr", "fpr", "tnr", "bal_acc", "t_det",
    ]);
    for (r, alpha) in reports {
        t.push(vec![
            method.to_string(),
            r.split_tag.clone(),
            alpha.to_string(),
            r.n_pos.to_string(),
            r.n_neg.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            opt(r.roc_auc),
            opt(r.tpr),
            opt(r.fpr),
            opt(r.tnr),
            opt(r.bal_acc),
            opt(r.t_det),
        ]);
    }
    t
}

pub fn sweep_table(curve: &SweepCurve, method: &str, split: &str) -> Table {
    let mut t = Table::new(&["method", "split", "alpha", "bal_acc", "t_det", "tpr", "fpr"]);
    for p in &curve.points {
        t.push(vec![
            method.to_string(),
            split.to_string(),
            p.alpha.to_string(),
            opt(p.bal_acc),
            opt(p.t_det),
            opt(p.tpr),
            opt(p.fpr),
        ]);
    }
    t
}

/// `last`, or `hori/diff` for flow embeddings, e.g. `mean/last`.
pub fn agg_name(spec: &AggregationSpec) -> String {
    match spec.axes {
        AxisAggregation::Token(m) => m.name().into(),
        AxisAggregation::Flow { hori, diff } => format!("{}/{}", hori.name(), diff.name()),
    }
}

pub fn grid_table(rows: &[(DetectorConfig, f64)], best_index: usize) -> Table {
    let mut t = Table::new(&[
        "index",
        "method",
        "aggregation",
        "cumsum",
        "learning_rate",
        "l2_weight",
        "epochs",
        "roc_auc",
        "best",
    ]);
    for (i, (c, auc)) in rows.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            c.method.tag(),
            agg_name(&c.aggregation),
            c.cumsum.to_string(),
            c.train.learning_rate.to_string(),
            c.train.l2_weight.to_string(),
            c.train.epochs.to_string(),
            auc.to_string(),
            (i == best_index).to_string(),
        ]);
    }
    t
}
