//! Adjustment-aware prediction: the area multiplier applied to the
//! adjustment-free workload forecast and propagated downstream.

use chrono::{DateTime, Utc};

use celladj_core::frame::{Cluster, MetricFrame};
use celladj_core::geometry::{area_multiplier, AdjustmentDelta};

use crate::error::{invalid, Result};
use crate::gt::{ClusterForecasts, GraphicalTransformer};

/// Sector angle used when a cell's configuration gives none.
pub const DEFAULT_THETA_DEG: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedForecast {
    pub cell_id: u32,
    /// Row of the frame where the forecast starts.
    pub t: usize,
    pub start: DateTime<Utc>,
    pub adjustment: AdjustmentDelta,
    pub theta_deg: f64,
    pub beta: f64,
    pub alpha_applied: f64,
    /// Forecasts in scaled space.
    pub scaled: ClusterForecasts,
    /// Forecasts in original units over `[t, t + O - 1]`.
    pub frame: MetricFrame,
}

/// Forecasts the horizon starting at row `t` of an unscaled frame under
/// adjustment `adj` taking effect at `t`.
pub fn predict_adjusted(
    gt: &GraphicalTransformer,
    frame: &MetricFrame,
    t: usize,
    adj: AdjustmentDelta,
    theta_deg: f64,
) -> Result<AdjustedForecast> {
    adj.validate()?;
    let beta = adj.beta()?;
    let alpha = area_multiplier(beta, theta_deg.to_radians())?;
    let input_len = gt.config().input_len;
    if t < input_len || t > frame.len() {
        return Err(invalid(format!(
            "forecast start {t} needs {input_len} history rows within a frame of {} rows",
            frame.len()
        )));
    }
    if frame.has_adjustment_in(t - input_len + 1..t) {
        return Err(invalid(format!(
            "cell {}: the look-back before row {t} contains an adjustment",
            frame.cell_id
        )));
    }
    let history = truncated(frame, t);
    let scaled = gt.scaler.apply(&history);
    let windows = gt.windows(&scaled, t)?;
    let graph = &gt.graph;
    let forecasts = gt.propagate(windows, |c| if graph.takes_multiplier(c) { alpha } else { 1.0 })?;
    let start = history.timestamps[t - input_len] + chrono::Duration::minutes(celladj_core::frame::INTERVAL_MINUTES * input_len as i64);
    let out = gt.to_frame(frame.cell_id, start, &forecasts);
    Ok(AdjustedForecast {
        cell_id: frame.cell_id,
        t,
        start,
        adjustment: adj,
        theta_deg,
        beta,
        alpha_applied: alpha,
        scaled: forecasts,
        frame: out,
    })
}

/// Adjustment-free forecast; `predict_adjusted` with a zero adjustment.
pub fn predict_free(gt: &GraphicalTransformer, frame: &MetricFrame, t: usize) -> Result<AdjustedForecast> {
    predict_adjusted(gt, frame, t, AdjustmentDelta::default(), DEFAULT_THETA_DEG)
}

/// Rows `..t` of `frame`, so nothing past the forecast start is visible.
fn truncated(frame: &MetricFrame, t: usize) -> MetricFrame {
    let mut out = MetricFrame::new(frame.cell_id, frame.timestamps[..t].to_vec());
    for r in 0..t {
        for m in 0..celladj_core::frame::N_METRICS {
            out.set(r, m, frame.get(r, m));
        }
    }
    out.adjustments = frame.adjustments.iter().filter(|a| a.index < t).copied().collect();
    out
}

/// Scaled workload ratio adjusted over free, for checking the contract.
pub fn workload_ratio(adjusted: &AdjustedForecast, free: &AdjustedForecast) -> Vec<f64> {
    adjusted
        .scaled
        .get(Cluster::Workload)
        .iter()
        .zip(free.scaled.get(Cluster::Workload))
        .filter(|(_, f)| **f != 0.0)
        .map(|(a, f)| a / f)
        .collect()
}
