//! Missing-aware RMSE and sMAPE, per-metric case aggregation and relative
//! tables.
//!
//! A metric with no observed points is undefined: it carries `None` and is
//! skipped (and counted) by aggregation, never averaged as zero.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::frame::{Metric, MetricFrame, N_METRICS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: Option<f64>,
    pub observed: usize,
}

impl Score {
    pub fn undefined() -> Self {
        Self {
            value: None,
            observed: 0,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

fn check_aligned(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<()> {
    if truth.len() != pred.len() || truth.len() != mask.len() {
        return Err(invalid(format!(
            "shape mismatch: truth {}, prediction {}, mask {}",
            truth.len(),
            pred.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// `sqrt(sum (x - x~)^2 w / sum w)`.
pub fn rmse(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<Score> {
    check_aligned(truth, pred, mask)?;
    let mut sse = 0.0;
    let mut n = 0usize;
    for ((&x, &p), &w) in truth.iter().zip(pred).zip(mask) {
        if w {
            sse += (x - p) * (x - p);
            n += 1;
        }
    }
    Ok(Score {
        value: (n > 0).then(|| (sse / n as f64).sqrt()),
        observed: n,
    })
}

/// Pointwise sMAPE term; `0/0` counts as agreement.
pub fn smape_term(x: f64, p: f64) -> f64 {
    let denom = (x.abs() + p.abs()) / 2.0;
    if denom == 0.0 {
        0.0
    } else {
        (x - p).abs() / denom
    }
}

/// Masked mean of `|x - x~| / ((|x| + |x~|) / 2)`, in `[0, 2]`.
pub fn smape(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<Score> {
    check_aligned(truth, pred, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&x, &p), &w) in truth.iter().zip(pred).zip(mask) {
        if w {
            sum += smape_term(x, p);
            n += 1;
        }
    }
    Ok(Score {
        value: (n > 0).then(|| sum / n as f64),
        observed: n,
    })
}

/// Per-metric scores of one evaluation case, plus pooled scores over
/// all metrics together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub metrics: Vec<String>,
    pub rmse: Vec<Score>,
    pub smape: Vec<Score>,
    pub pooled_rmse: Score,
    pub pooled_smape: Score,
}

impl CaseScores {
    /// Scores from column-major series: `truth[m]` is metric `m`'s series.
    pub fn from_columns(
        metrics: Vec<String>,
        truth: &[Vec<f64>],
        pred: &[Vec<f64>],
        mask: &[Vec<bool>],
    ) -> Result<Self> {
        if truth.len() != metrics.len() || pred.len() != metrics.len() || mask.len() != metrics.len() {
            return Err(invalid("column count does not match metric list"));
        }
        let mut rmse_v = Vec::with_capacity(metrics.len());
        let mut smape_v = Vec::with_capacity(metrics.len());
        for m in 0..metrics.len() {
            rmse_v.push(rmse(&truth[m], &pred[m], &mask[m])?);
            smape_v.push(smape(&truth[m], &pred[m], &mask[m])?);
        }
        let flat_t: Vec<f64> = truth.concat();
        let flat_p: Vec<f64> = pred.concat();
        let flat_w: Vec<bool> = mask.concat();
        Ok(Self {
            metrics,
            rmse: rmse_v,
            smape: smape_v,
            pooled_rmse: rmse(&flat_t, &flat_p, &flat_w)?,
            pooled_smape: smape(&flat_t, &flat_p, &flat_w)?,
        })
    }

    /// Scores over `rows` of two frames. A point counts when the truth
    /// observes it and the prediction provides it.
    pub fn from_frames(truth: &MetricFrame, pred: &MetricFrame, rows: Range<usize>) -> Result<Self> {
        if rows.end > truth.len() || rows.end > pred.len() {
            return Err(invalid(format!(
                "row range {rows:?} exceeds frame lengths {} / {}",
                truth.len(),
                pred.len()
            )));
        }
        let mut t: Vec<Vec<f64>> = (0..N_METRICS).map(|_| Vec::with_capacity(rows.len())).collect();
        let mut p: Vec<Vec<f64>> = (0..N_METRICS).map(|_| Vec::with_capacity(rows.len())).collect();
        let mut w: Vec<Vec<bool>> = (0..N_METRICS).map(|_| Vec::with_capacity(rows.len())).collect();
        for r in rows {
            for m in 0..N_METRICS {
                t[m].push(truth.value(r, m));
                p[m].push(pred.value(r, m));
                w[m].push(truth.is_observed(r, m) && pred.is_observed(r, m));
            }
        }
        let names = Metric::ALL.iter().map(|m| m.name().to_string()).collect();
        Self::from_columns(names, &t, &p, &w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub rmse: Option<f64>,
    pub smape: Option<f64>,
    /// Cases contributing a defined value.
    pub rmse_cases: usize,
    pub smape_cases: usize,
}

/// Per-metric means over cases for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub method: String,
    pub cases: usize,
    pub rows: Vec<MetricRow>,
}

/// Order-independent mean: values are summed in sorted order.
fn stable_mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    Some(values.into_iter().sum::<f64>() / n)
}

/// Averages each metric over the cases where it is defined.
pub fn evaluate_cases(method: &str, cases: &[CaseScores]) -> Result<MetricTable> {
    let first = cases.first().ok_or_else(|| invalid("no evaluation cases"))?;
    if let Some(bad) = cases.iter().position(|c| c.metrics != first.metrics) {
        return Err(invalid(format!("case {bad} has a different metric list")));
    }
    let mut rows = Vec::with_capacity(first.metrics.len() + 1);
    let mut push = |name: &str, r: Vec<f64>, s: Vec<f64>| {
        rows.push(MetricRow {
            metric: name.to_string(),
            rmse_cases: r.len(),
            smape_cases: s.len(),
            rmse: stable_mean(r),
            smape: stable_mean(s),
        });
    };
    for (m, name) in first.metrics.iter().enumerate() {
        let r = cases.iter().filter_map(|c| c.rmse[m].value).collect();
        let s = cases.iter().filter_map(|c| c.smape[m].value).collect();
        push(name, r, s);
    }
    let r = cases.iter().filter_map(|c| c.pooled_rmse.value).collect();
    let s = cases.iter().filter_map(|c| c.pooled_smape.value).collect();
    push(POOLED, r, s);
    Ok(MetricTable {
        method: method.to_string(),
        cases: cases.len(),
        rows,
    })
}

/// Row name of the all-metrics pooled scores.
pub const POOLED: &str = "pooled";

fn ratio(value: Option<f64>, reference: Option<f64>) -> Option<f64> {
    match (value, reference) {
        (Some(v), Some(r)) if r != 0.0 => Some(v / r),
        (Some(0.0), Some(_)) => Some(1.0),
        _ => None,
    }
}

impl MetricTable {
    pub fn row(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Entries divided by `reference`'s, so the reference reads 1.
    /// A zero reference is undefined unless this entry is zero too.
    pub fn relative_to(&self, reference: &MetricTable) -> Result<MetricTable> {
        if self.rows.len() != reference.rows.len()
            || self.rows.iter().zip(&reference.rows).any(|(a, b)| a.metric != b.metric)
        {
            return Err(invalid("tables cover different metrics"));
        }
        let rows = self
            .rows
            .iter()
            .zip(&reference.rows)
            .map(|(a, b)| MetricRow {
                metric: a.metric.clone(),
                rmse: ratio(a.rmse, b.rmse),
                smape: ratio(a.smape, b.smape),
                rmse_cases: a.rmse_cases,
                smape_cases: a.smape_cases,
            })
            .collect();
        Ok(MetricTable {
            method: format!("{}/{}", self.method, reference.method),
            cases: self.cases,
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        render_csv(std::slice::from_ref(self))
    }

    pub fn to_text(&self) -> String {
        render_text(std::slice::from_ref(self))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `method,metric,rmse,smape,rmse_cases,smape_cases`; undefined values are
/// empty fields.
pub fn render_csv(tables: &[MetricTable]) -> String {
    let mut s = String::from("method,metric,rmse,smape,rmse_cases,smape_cases\n");
    for t in tables {
        for r in &t.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t.method,
                r.metric,
                fmt_opt(r.rmse),
                fmt_opt(r.smape),
                r.rmse_cases,
                r.smape_cases
            );
        }
    }
    s
}

/// Side-by-side aligned text, one RMSE and one sMAPE column per method.
pub fn render_text(tables: &[MetricTable]) -> String {
    let Some(first) = tables.first() else {
        return String::new();
    };
    let mut header = vec!["metric".to_string()];
    for t in tables {
        header.push(format!("{} rmse", t.method));
        header.push(format!("{} smape", t.method));
    }
    let mut grid = vec![header];
    for (i, row) in first.rows.iter().enumerate() {
        let mut line = vec![row.metric.clone()];
        for t in tables {
            let r = t.rows.get(i);
            let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
            line.push(cell(r.and_then(|r| r.rmse)));
            line.push(cell(r.and_then(|r| r.smape)));
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for line in &grid {
        for (c, cell) in line.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(s, "  {cell:>w$}", w = widths[c]);
            }
        }
        s.push('\n');
    }
    s
}
