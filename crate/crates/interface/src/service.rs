//! JSON what-if service over an immutable model and scenario.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Map, Value};

use celladj_core::evalmetrics::{evaluate_cases, CaseScores, MetricTable};
use celladj_core::frame::{Metric, MetricFrame, N_METRICS};
use celladj_core::simulator::{synthesize, synthesize_cells, AdjustmentSpec, CellConfig, CellDataset, ScenarioConfig};
use celladj_core::AdjustmentDelta;
use celladj_forecast::naive::{seasonal_naive, DEFAULT_PERIOD};
use celladj_forecast::pipeline::DEFAULT_THETA_DEG;
use celladj_forecast::window::adjustment_free_starts;
use celladj_forecast::{predict_adjusted, predict_free, ClusterForecasts, GraphicalTransformer};

use crate::csvio::format_timestamp;
use crate::error::{data, Result};
use crate::report::{alpha_report, boundary, regime_name, Boundary};

/// Upper bound on series values per what-if response.
pub const MAX_SERIES_POINTS: usize = 2000;
/// Largest accepted |delta| in dB.
pub const MAX_DELTA_DB: f64 = 40.0;

pub struct ServiceState {
    pub gt: GraphicalTransformer,
    pub config: ScenarioConfig,
    pub dataset: CellDataset,
    metrics: Value,
}

impl ServiceState {
    /// Synthesizes the scenario and precomputes the evaluation tables.
    pub fn new(gt: GraphicalTransformer, config: ScenarioConfig) -> Result<Self> {
        let dataset = synthesize(&config)?;
        let metrics = metrics_body(&gt, &dataset)?;
        Ok(Self {
            gt,
            config,
            dataset,
            metrics,
        })
    }

    fn cell(&self, id: u32) -> Option<(&CellConfig, &MetricFrame)> {
        Some((self.dataset.cell(id)?, self.dataset.frame(id)?))
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/scenario", get(scenario))
        .route("/whatif", post(whatif))
        .route("/metrics", get(metrics))
        .with_state(state)
}

pub async fn serve(state: Arc<ServiceState>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    axum::serve(listener, router(state)).await
}

fn error(status: StatusCode, body: Value) -> Response {
    (status, Json(body)).into_response()
}

fn field_error(errors: Vec<(String, String)>) -> Response {
    let list: Vec<Value> = errors
        .into_iter()
        .map(|(f, m)| json!({ "field": f, "message": m }))
        .collect();
    error(StatusCode::BAD_REQUEST, json!({ "errors": list }))
}

async fn scenario(State(s): State<Arc<ServiceState>>) -> Json<Value> {
    let c = s.gt.config();
    let cells: Vec<Value> = s
        .dataset
        .cells
        .iter()
        .map(|cell| {
            json!({
                "id": cell.id,
                "position": cell.position,
                "tx_power_dbm": cell.tx_power_dbm,
                "cio_db": cell.cio_db,
                "theta_deg": s.config.theta_deg(cell.id),
                "exported": s.dataset.frame(cell.id).is_some(),
            })
        })
        .collect();
    let len = s.dataset.frames.first().map_or(0, |f| f.len());
    Json(json!({
        "layout": {
            "rings": s.config.layout.rings,
            "spacing_m": s.config.layout.spacing_m,
            "tx_power_dbm": s.config.layout.tx_power_dbm,
            "cio_db": s.config.layout.cio_db,
            "hys_db": s.config.hys_db,
        },
        "cells": cells,
        "theta_default_deg": s.config.layout.theta_deg,
        "time": {
            "start": format_timestamp(s.config.temporal.start),
            "interval_minutes": celladj_core::frame::INTERVAL_MINUTES,
            "len": len,
            "t_min": c.input_len,
            "t_max": len,
            "input_len": c.input_len,
            "output_len": c.output_len,
        },
        "adjustments": s.config.adjustments,
    }))
}

async fn metrics(State(s): State<Arc<ServiceState>>) -> Json<Value> {
    Json(s.metrics.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhatIfRequest {
    pub cell_id: u32,
    pub t: usize,
    pub delta_db: f64,
    pub delta_cio_db: f64,
    pub theta_deg: Option<f64>,
    pub metrics: Option<Vec<Metric>>,
}

/// Parses a what-if body, collecting one message per bad field.
pub fn parse_whatif(body: &[u8]) -> std::result::Result<WhatIfRequest, Vec<(String, String)>> {
    let v: Value = serde_json::from_slice(body).map_err(|e| vec![("body".to_string(), format!("invalid JSON: {e}"))])?;
    let obj: &Map<String, Value> = v
        .as_object()
        .ok_or_else(|| vec![("body".to_string(), "expected a JSON object".to_string())])?;
    let mut errs = Vec::new();
    let known = ["cell_id", "t", "delta_db", "delta_cio_db", "theta_deg", "metrics"];
    for k in obj.keys() {
        if !known.contains(&k.as_str()) {
            errs.push((k.clone(), format!("unknown field; expected one of {}", known.join(", "))));
        }
    }
    let mut uint = |name: &str| -> Option<u64> {
        match obj.get(name) {
            None => {
                errs.push((name.into(), "required".into()));
                None
            }
            Some(x) => x.as_u64().or_else(|| {
                errs.push((name.into(), format!("must be a non-negative integer, got {x}")));
                None
            }),
        }
    };
    let cell_id = uint("cell_id");
    let t = uint("t");
    let mut number = |name: &str, default: Option<f64>, check: &dyn Fn(f64) -> Option<String>| -> Option<f64> {
        match obj.get(name) {
            None | Some(Value::Null) => default,
            Some(x) => match x.as_f64() {
                Some(f) => match check(f) {
                    None => Some(f),
                    Some(msg) => {
                        errs.push((name.into(), msg));
                        None
                    }
                },
                None => {
                    errs.push((name.into(), format!("must be a number, got {x}")));
                    None
                }
            },
        }
    };
    let delta_check = |f: f64| (f.abs() > MAX_DELTA_DB).then(|| format!("must lie in [-{MAX_DELTA_DB}, {MAX_DELTA_DB}] dB, got {f}"));
    let delta_db = number("delta_db", Some(0.0), &delta_check);
    let delta_cio_db = number("delta_cio_db", Some(0.0), &delta_check);
    let theta_check = |f: f64| (!(f > 0.0 && f < 180.0)).then(|| format!("must lie in (0, 180) degrees, got {f}"));
    let theta_deg = number("theta_deg", None, &theta_check);
    let metrics = match obj.get("metrics") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            for it in items {
                match it.as_str().and_then(Metric::from_name) {
                    Some(m) if !out.contains(&m) => out.push(m),
                    Some(m) => errs.push(("metrics".into(), format!("{} listed twice", m.name()))),
                    None => errs.push(("metrics".into(), format!("unknown metric {it}"))),
                }
            }
            if items.is_empty() {
                errs.push(("metrics".into(), "must name at least one metric".into()));
            }
            Some(out)
        }
        Some(x) => {
            errs.push(("metrics".into(), format!("must be an array of metric names, got {x}")));
            None
        }
    };
    if !errs.is_empty() {
        return Err(errs);
    }
    let cell_id = cell_id.unwrap();
    let cell_id = u32::try_from(cell_id).map_err(|_| vec![("cell_id".to_string(), "out of range".to_string())])?;
    Ok(WhatIfRequest {
        cell_id,
        t: t.unwrap() as usize,
        delta_db: delta_db.unwrap(),
        delta_cio_db: delta_cio_db.unwrap(),
        theta_deg,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesColumn {
    pub metric: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub timestamps: Vec<String>,
    pub columns: Vec<SeriesColumn>,
}

fn series(frame: &MetricFrame, rows: &[usize], metrics: &[Metric]) -> Series {
    Series {
        timestamps: rows.iter().map(|&r| format_timestamp(frame.timestamps[r])).collect(),
        columns: metrics
            .iter()
            .map(|m| SeriesColumn {
                metric: m.name().to_string(),
                values: rows.iter().map(|&r| frame.get(r, m.index())).collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfResponse {
    pub cell_id: u32,
    pub t: usize,
    pub delta_db: f64,
    pub delta_cio_db: f64,
    pub theta_deg: f64,
    pub beta: f64,
    pub alpha: f64,
    pub regime: &'static str,
    pub boundary_before: Option<Boundary>,
    pub boundary_after: Option<Boundary>,
    /// Every `stride`-th horizon row is returned.
    pub stride: usize,
    pub forecast_free: Series,
    pub forecast_adjusted: Series,
    pub ground_truth_if_available: Option<Series>,
    pub ground_truth_note: Option<String>,
}

pub enum WhatIfError {
    Fields(Vec<(String, String)>),
    UnknownCell(u32),
    OutOfRange(String),
    Internal(String),
}

impl IntoResponse for WhatIfError {
    fn into_response(self) -> Response {
        match self {
            WhatIfError::Fields(f) => field_error(f),
            WhatIfError::UnknownCell(id) => error(
                StatusCode::NOT_FOUND,
                json!({ "error": format!("cell {id} is not part of the loaded scenario's exported cells") }),
            ),
            WhatIfError::OutOfRange(m) => error(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": m })),
            WhatIfError::Internal(m) => error(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        }
    }
}

/// Answers one what-if request; pure over the shared state.
pub fn answer(s: &ServiceState, req: &WhatIfRequest) -> std::result::Result<WhatIfResponse, WhatIfError> {
    let (cell, frame) = s.cell(req.cell_id).ok_or(WhatIfError::UnknownCell(req.cell_id))?;
    let cfg = s.gt.config();
    if req.t < cfg.input_len || req.t > frame.len() {
        return Err(WhatIfError::OutOfRange(format!(
            "t must lie in [{}, {}], got {}",
            cfg.input_len,
            frame.len(),
            req.t
        )));
    }
    if frame.has_adjustment_in(req.t - cfg.input_len + 1..req.t) {
        return Err(WhatIfError::OutOfRange(format!(
            "the look-back before t = {} contains a recorded adjustment",
            req.t
        )));
    }
    let theta_deg = req
        .theta_deg
        .or_else(|| s.config.theta_deg(cell.id))
        .unwrap_or(DEFAULT_THETA_DEG);
    let report = alpha_report(req.delta_db, req.delta_cio_db, theta_deg, None)
        .map_err(|e| WhatIfError::Fields(vec![("theta_deg".into(), e.to_string())]))?;
    let adj = AdjustmentDelta::new(req.delta_db, req.delta_cio_db)
        .map_err(|e| WhatIfError::Fields(vec![("delta_db".into(), e.to_string())]))?;
    let free = predict_free(&s.gt, frame, req.t).map_err(|e| WhatIfError::Internal(e.to_string()))?;
    let adjusted = predict_adjusted(&s.gt, frame, req.t, adj, theta_deg).map_err(|e| WhatIfError::Internal(e.to_string()))?;
    if adjusted.alpha_applied.to_bits() != report.alpha.to_bits() {
        return Err(WhatIfError::Internal("multiplier mismatch between report and pipeline".into()));
    }

    let metrics: Vec<Metric> = req.metrics.clone().unwrap_or_else(|| Metric::ALL.to_vec());
    let o = cfg.output_len;
    let (truth, note) = ground_truth(s, req, adj, frame);
    let n_series = if truth.is_some() { 3 } else { 2 };
    let stride = (metrics.len() * o * n_series).div_ceil(MAX_SERIES_POINTS).max(1);
    let rows: Vec<usize> = (0..o).step_by(stride).collect();
    let ground = truth.map(|t| {
        let truth_rows: Vec<usize> = rows.iter().map(|r| req.t + r).filter(|&r| r < t.len()).collect();
        series(&t, &truth_rows, &metrics)
    });

    let spacing = s.config.layout.spacing_m;
    Ok(WhatIfResponse {
        cell_id: req.cell_id,
        t: req.t,
        delta_db: req.delta_db,
        delta_cio_db: req.delta_cio_db,
        theta_deg,
        beta: report.beta,
        alpha: report.alpha,
        regime: regime_name(report.regime),
        boundary_before: boundary(1.0, theta_deg, spacing, cell.position).ok(),
        boundary_after: boundary(report.beta, theta_deg, spacing, cell.position).ok(),
        stride,
        forecast_free: series(&free.frame, &rows, &metrics),
        forecast_adjusted: series(&adjusted.frame, &rows, &metrics),
        ground_truth_if_available: ground,
        ground_truth_note: note,
    })
}

/// The scenario re-run with the requested adjustment applied at `t`.
fn ground_truth(s: &ServiceState, req: &WhatIfRequest, adj: AdjustmentDelta, frame: &MetricFrame) -> (Option<MetricFrame>, Option<String>) {
    if req.t >= frame.len() {
        return (None, Some("the horizon lies past the end of the scenario".into()));
    }
    if adj.is_zero() {
        return (Some(frame.clone()), None);
    }
    let mut cfg = s.config.clone();
    cfg.adjustments.push(AdjustmentSpec {
        cell_id: req.cell_id,
        delta_power_db: req.delta_db,
        delta_cio_db: req.delta_cio_db,
        apply_index: req.t,
    });
    match synthesize_cells(&cfg, &[req.cell_id]) {
        Ok(mut ds) => (ds.frames.pop(), None),
        Err(e) => (None, Some(format!("simulator cannot realize this adjustment: {e}"))),
    }
}

async fn whatif(State(s): State<Arc<ServiceState>>, body: Bytes) -> std::result::Result<Json<WhatIfResponse>, WhatIfError> {
    let req = parse_whatif(&body).map_err(WhatIfError::Fields)?;
    answer(&s, &req).map(Json)
}

fn unscale(gt: &GraphicalTransformer, cell: u32, start: chrono::DateTime<chrono::Utc>, f: &ClusterForecasts) -> MetricFrame {
    gt.to_frame(cell, start, f)
}

/// Forecast-versus-truth tables over daily forecast starts of every
/// exported cell: the forecaster, seasonal naive when the look-back
/// covers a day, and both relative to the forecaster.
pub fn metrics_body(gt: &GraphicalTransformer, ds: &CellDataset) -> Result<Value> {
    let c = gt.config();
    let mut gt_cases = Vec::new();
    let mut naive_cases = Vec::new();
    let with_naive = c.input_len >= DEFAULT_PERIOD;
    for f in &ds.frames {
        let scaled = gt.scaler.apply(f);
        for t in adjustment_free_starts(f, c.input_len, c.output_len, 0..f.len(), 1)
            .into_iter()
            .filter(|t| (t - c.input_len).is_multiple_of(celladj_core::frame::STEPS_PER_DAY))
        {
            let truth = slice(f, t, c.output_len);
            let pred = predict_free(gt, f, t)?;
            gt_cases.push(CaseScores::from_frames(&truth, &pred.frame, 0..c.output_len)?);
            if with_naive {
                let windows = gt.windows(&scaled, t)?;
                let mut nf = pred.scaled.clone();
                for w in &windows {
                    *nf.get_mut(w.cluster) = seasonal_naive(w, DEFAULT_PERIOD)?;
                }
                let nframe = unscale(gt, f.cell_id, pred.start, &nf);
                naive_cases.push(CaseScores::from_frames(&truth, &nframe, 0..c.output_len)?);
            }
        }
    }
    if gt_cases.is_empty() {
        return Err(data("scenario is too short for a single forecast window"));
    }
    let mut tables: Vec<MetricTable> = vec![evaluate_cases("forecaster", &gt_cases)?];
    if with_naive {
        tables.push(evaluate_cases("seasonal_naive", &naive_cases)?);
    }
    let relative: Vec<MetricTable> = tables
        .iter()
        .map(|t| t.relative_to(&tables[0]))
        .collect::<celladj_core::Result<_>>()?;
    Ok(json!({
        "cases": gt_cases.len(),
        "tables": tables,
        "relative_to": "forecaster",
        "relative": relative,
    }))
}

/// Rows `[t, t + len)` of `f` as a new frame.
pub fn slice(f: &MetricFrame, t: usize, len: usize) -> MetricFrame {
    let end = (t + len).min(f.len());
    let mut out = MetricFrame::new(f.cell_id, f.timestamps[t..end].to_vec());
    for r in t..end {
        for m in 0..N_METRICS {
            out.set(r - t, m, f.get(r, m));
        }
    }
    out
}
