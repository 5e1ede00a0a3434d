#![allow(dead_code)]

use chrono::TimeZone;
use celladj_core::frame::{MetricFrame, N_METRICS};
use celladj_forecast::{GraphicalModel, GraphicalTransformer, ModelConfig, Scaler};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        d_ff: 16,
        input_len: 8,
        output_len: 4,
        mask_ratio: 0.5,
    }
}

/// Smooth daily-like pattern on every metric with a few missing points.
pub fn periodic_frame(cell_id: u32, len: usize, period: usize) -> MetricFrame {
    let start = chrono::Utc.with_ymd_and_hms(2022, 8, 1, 0, 0, 0).unwrap();
    let mut f = MetricFrame::new(cell_id, MetricFrame::timeline(start, len));
    for t in 0..len {
        let phase = std::f64::consts::TAU * (t % period) as f64 / period as f64;
        for m in 0..N_METRICS {
            let v = 10.0 * (m + 1) as f64 * (1.2 + phase.sin() + 0.3 * (2.0 * phase + m as f64).cos());
            f.set(t, m, Some(v));
        }
    }
    for t in (3..len).step_by(17) {
        f.set(t, t % N_METRICS, None);
    }
    f
}

pub fn tiny_gt(frame: &MetricFrame, seed: u64) -> GraphicalTransformer {
    let scaler = Scaler::fit(&[frame], None).unwrap();
    GraphicalTransformer::new(GraphicalModel::standard(), scaler, tiny_config(), seed).unwrap()
}
