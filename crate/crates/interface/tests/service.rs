use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use celladj_core::frame::{Metric, STEPS_PER_DAY};
use celladj_core::simulator::{synthesize, synthesize_cells, AdjustmentSpec, ScenarioConfig};
use celladj_forecast::{GraphicalModel, GraphicalTransformer, ModelConfig, Scaler};
use celladj_interface::report::alpha_report;
use celladj_interface::service::{parse_whatif, router, ServiceState, MAX_SERIES_POINTS};

const INPUT_LEN: usize = 8;
const OUTPUT_LEN: usize = 96;
const ADJUSTED_AT: usize = 200;

fn scenario() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::homogeneous();
    cfg.temporal.horizon = 3 * STEPS_PER_DAY;
    cfg.raster_resolution = 128;
    cfg.export_cells = vec![0, 1, 2];
    cfg.adjustments.push(AdjustmentSpec {
        cell_id: 1,
        delta_power_db: -3.0,
        delta_cio_db: 0.0,
        apply_index: ADJUSTED_AT,
    });
    cfg
}

fn state() -> Arc<ServiceState> {
    static STATE: OnceLock<Arc<ServiceState>> = OnceLock::new();
    STATE
        .get_or_init(|| {
            let cfg = scenario();
            let ds = synthesize(&cfg).unwrap();
            let refs: Vec<_> = ds.frames.iter().collect();
            let mc = ModelConfig {
                d_model: 8,
                d_ff: 16,
                input_len: INPUT_LEN,
                output_len: OUTPUT_LEN,
                ..ModelConfig::default()
            };
            let gt = GraphicalTransformer::new(GraphicalModel::standard(), Scaler::fit(&refs, None).unwrap(), mc, 5).unwrap();
            Arc::new(ServiceState::new(gt, cfg).unwrap())
        })
        .clone()
}

async fn call(req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(state()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn whatif_raw(body: &str) -> (StatusCode, Vec<u8>) {
    call(
        Request::post("/whatif")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

async fn whatif(body: Value) -> (StatusCode, Value) {
    let (s, b) = whatif_raw(&body.to_string()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn get(path: &str) -> (StatusCode, Value) {
    let (s, b) = call(Request::get(path).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn error_fields(v: &Value) -> Vec<String> {
    v["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["field"].as_str().unwrap().to_string())
        .collect()
}

fn point_count(v: &Value) -> usize {
    ["forecast_free", "forecast_adjusted", "ground_truth_if_available"]
        .iter()
        .filter(|k| !v[**k].is_null())
        .map(|k| {
            v[*k]["columns"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c["values"].as_array().unwrap().len())
                .sum::<usize>()
        })
        .sum()
}

#[tokio::test]
async fn zero_adjustment_forecasts_are_identical() {
    let (s, v) = whatif(json!({ "cell_id": 0, "t": 100 })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["alpha"].as_f64(), Some(1.0));
    assert_eq!(v["regime"], "identity");
    assert_eq!(v["forecast_free"], v["forecast_adjusted"]);
    assert_eq!(v["boundary_before"], v["boundary_after"]);
    let truth = &v["ground_truth_if_available"];
    assert_eq!(truth["timestamps"], v["forecast_free"]["timestamps"]);
    assert!(v["ground_truth_note"].is_null());
}

#[tokio::test]
async fn alpha_matches_the_report_exactly() {
    for (d, o, theta) in [(-6.0, 0.0, None), (-2.5, 1.25, Some(90.0)), (4.0, 0.0, Some(120.0)), (1e-5, 0.0, None)] {
        let mut body = json!({ "cell_id": 2, "t": 150, "delta_db": d, "delta_cio_db": o });
        if let Some(t) = theta {
            body["theta_deg"] = json!(t);
        }
        let (s, v) = whatif(body).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let r = alpha_report(d, o, theta.unwrap_or(60.0), None).unwrap();
        assert_eq!(v["alpha"].as_f64().unwrap().to_bits(), r.alpha.to_bits());
        assert_eq!(v["beta"].as_f64().unwrap().to_bits(), r.beta.to_bits());
        assert_eq!(v["theta_deg"].as_f64(), Some(theta.unwrap_or(60.0)));
    }
}

#[tokio::test]
async fn responses_stay_under_the_point_budget() {
    let (s, v) = whatif(json!({ "cell_id": 0, "t": 100, "delta_db": -6 })).await;
    assert_eq!(s, StatusCode::OK);
    let stride = v["stride"].as_u64().unwrap() as usize;
    assert_eq!(stride, (17 * OUTPUT_LEN * 3).div_ceil(MAX_SERIES_POINTS));
    assert!(point_count(&v) <= MAX_SERIES_POINTS, "{}", point_count(&v));
    assert_eq!(v["forecast_free"]["timestamps"].as_array().unwrap().len(), OUTPUT_LEN.div_ceil(stride));

    let (_, v) = whatif(json!({ "cell_id": 0, "t": 100, "delta_db": -6, "metrics": ["avg_rrc_conn"] })).await;
    assert_eq!(v["stride"], 1);
    let cols = v["forecast_adjusted"]["columns"].as_array().unwrap();
    assert_eq!(cols.len(), 1);
    assert_eq!(cols[0]["metric"], "avg_rrc_conn");
    assert_eq!(cols[0]["values"].as_array().unwrap().len(), OUTPUT_LEN);
}

#[tokio::test]
async fn adjusted_workload_is_scaled_by_alpha() {
    let m = Metric::ALL[0].name();
    let (_, v) = whatif(json!({ "cell_id": 0, "t": 100, "delta_db": -6, "metrics": [m] })).await;
    let alpha = v["alpha"].as_f64().unwrap();
    let free = v["forecast_free"]["columns"][0]["values"].as_array().unwrap();
    let adj = v["forecast_adjusted"]["columns"][0]["values"].as_array().unwrap();
    let (mut sf, mut sa) = (0.0, 0.0);
    for (f, a) in free.iter().zip(adj) {
        sf += f.as_f64().unwrap();
        sa += a.as_f64().unwrap();
    }
    assert!(sa < sf, "{sa} vs {sf}");
    assert!(alpha < 0.5);
}

#[tokio::test]
async fn ground_truth_is_the_counterfactual_run() {
    let m = Metric::ALL[0];
    let (_, v) = whatif(json!({ "cell_id": 0, "t": 120, "delta_db": -6, "metrics": [m.name()] })).await;
    let mut cfg = scenario();
    cfg.adjustments.push(AdjustmentSpec {
        cell_id: 0,
        delta_power_db: -6.0,
        delta_cio_db: 0.0,
        apply_index: 120,
    });
    let cf = synthesize_cells(&cfg, &[0]).unwrap();
    let f = cf.frame(0).unwrap();
    let truth = v["ground_truth_if_available"]["columns"][0]["values"].as_array().unwrap();
    assert_eq!(truth.len(), OUTPUT_LEN);
    for (r, x) in truth.iter().enumerate() {
        assert_eq!(x.as_f64(), f.get(120 + r, m.index()));
    }
    let factual = state().dataset.frame(0).unwrap().get(130, m.index()).unwrap();
    assert!(truth[10].as_f64().unwrap() < factual);

    let (_, v) = whatif(json!({ "cell_id": 0, "t": 3 * STEPS_PER_DAY, "delta_db": -6 })).await;
    assert!(v["ground_truth_if_available"].is_null());
    assert!(v["ground_truth_note"].as_str().unwrap().contains("past the end"));
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let body = r#"{"cell_id": 2, "t": 140, "delta_db": -4.5, "delta_cio_db": 0.5}"#;
    let tasks: Vec<_> = (0..8).map(|_| tokio::spawn(whatif_raw(body))).collect();
    let mut outs = Vec::new();
    for t in tasks {
        outs.push(t.await.unwrap());
    }
    assert_eq!(outs[0].0, StatusCode::OK);
    assert!(outs.iter().all(|o| *o == outs[0]));
}

#[tokio::test]
async fn field_errors_are_reported_individually() {
    let (s, v) = whatif(json!({ "t": -1, "delta_db": "x", "theta_deg": 200, "colour": 1, "metrics": ["nope"] })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let mut f = error_fields(&v);
    f.sort();
    assert_eq!(f, ["cell_id", "colour", "delta_db", "metrics", "t", "theta_deg"]);

    let (s, v) = whatif(json!({ "cell_id": 0, "t": 100, "delta_cio_db": 41 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_fields(&v), ["delta_cio_db"]);

    let (s, v) = whatif(json!({ "cell_id": 0, "t": 100, "metrics": [] })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_fields(&v), ["metrics"]);

    let (s, b) = whatif_raw("{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(error_fields(&v), ["body"]);
    assert!(parse_whatif(b"[1]").is_err());
}

#[tokio::test]
async fn unknown_and_unexported_cells_are_404() {
    for id in [3, 18, 999] {
        let (s, v) = whatif(json!({ "cell_id": id, "t": 100 })).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{v}");
        assert!(v["error"].as_str().unwrap().contains(&id.to_string()));
    }
}

#[tokio::test]
async fn out_of_range_times_are_422() {
    let len = 3 * STEPS_PER_DAY;
    for t in [0, INPUT_LEN - 1, len + 1] {
        let (s, _) = whatif(json!({ "cell_id": 0, "t": t })).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "t = {t}");
    }
    let (s, _) = whatif(json!({ "cell_id": 0, "t": INPUT_LEN })).await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = whatif(json!({ "cell_id": 1, "t": ADJUSTED_AT + 3 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("adjustment"));
    let (s, _) = whatif(json!({ "cell_id": 1, "t": ADJUSTED_AT })).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn scenario_endpoint() {
    let (s, v) = get("/scenario").await;
    assert_eq!(s, StatusCode::OK);
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 19);
    let exported: Vec<u64> = cells
        .iter()
        .filter(|c| c["exported"] == true)
        .map(|c| c["id"].as_u64().unwrap())
        .collect();
    assert_eq!(exported, [0, 1, 2]);
    assert_eq!(cells[0]["theta_deg"], 60.0);
    assert_eq!(v["time"]["t_min"], INPUT_LEN);
    assert_eq!(v["time"]["len"], 3 * STEPS_PER_DAY);
    assert_eq!(v["adjustments"][0]["apply_index"], ADJUSTED_AT);
}

#[tokio::test]
async fn metrics_endpoint() {
    let (s, v) = get("/metrics").await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["cases"].as_u64().unwrap() > 0);
    let tables = v["tables"].as_array().unwrap();
    // The look-back is shorter than a day, so there is no seasonal naive row.
    assert_eq!(tables.len(), 1);
    assert_eq!(tables[0]["method"], "forecaster");
    let rows = tables[0]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 18);
    assert_eq!(rows[17]["metric"], "pooled");
    let rel = &v["relative"][0]["rows"][0];
    assert_eq!(rel["rmse"], 1.0);
}

#[tokio::test]
async fn unknown_route_is_404() {
    let (s, _) = call(Request::get("/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
