//! Closed-form maps from usage mass, time and interference to metrics.
//!
//! Workload metrics are linear in the integrated usage mass (utilizations
//! clamp at 100%), so every workload metric scales with the serving area
//! under uniform density. QoS metrics follow a normalized logistic
//! congestion curve `c(u, v)` in load `u` and interference excess `v`:
//!
//! ```text
//! s(u, v)  = sigmoid(steepness * (u - midpoint) + interference_gain * v)
//! c(u, v)  = (s(u, v) - s(0, 0)) / (s(1, 0) - s(0, 0))
//! success  = clamp(ceiling - depth * c, 0, 1)
//! drop     = 1 - clamp(ceiling - depth * c, 0, 1)
//! ```
//!
//! so `c(0, 0) = 0` (values at their ceiling) and `c(1, 0) = 1` (values one
//! full `depth` below the ceiling once load reaches capacity).

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::frame::TimeFeatures;

use super::config::TemporalConfig;

/// Daily cosine around `peak_hour`, in `[-1, 1]`.
pub fn daily_phase(peak_hour: f64, tf: &TimeFeatures) -> f64 {
    (TAU * (tf.hour_of_day() - peak_hour) / 24.0).cos()
}

/// Multiplier on the spatial density at a time step.
pub fn envelope(temporal: &TemporalConfig, tf: &TimeFeatures) -> f64 {
    let daily = 1.0 + temporal.daily_amplitude * daily_phase(temporal.peak_hour, tf);
    let weekend = if tf.day_of_week >= 5 {
        temporal.weekend_factor
    } else {
        1.0
    };
    temporal.base * daily * weekend
}

/// Coefficients turning integrated usage mass into the 7 workload metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadMap {
    /// Per unit mass: rrc_conn_established, erab_conn_established,
    /// max_rrc_conn, avg_rrc_conn.
    pub rrc_established: f64,
    pub erab_established: f64,
    pub max_rrc: f64,
    pub avg_rrc: f64,
    /// Percent per unit mass, clamped at 100.
    pub prb_dl_pct: f64,
    pub prb_ul_pct: f64,
    pub pdcch_cce_pct: f64,
}

impl Default for WorkloadMap {
    fn default() -> Self {
        Self {
            rrc_established: 3.0,
            erab_established: 2.6,
            max_rrc: 0.5,
            avg_rrc: 0.3,
            prb_dl_pct: 0.15,
            prb_ul_pct: 0.1,
            pdcch_cce_pct: 0.12,
        }
    }
}

impl WorkloadMap {
    /// Workload metrics in column order for a usage mass.
    pub fn apply(&self, mass: f64) -> [f64; 7] {
        let m = mass.max(0.0);
        let pct = |k: f64| (k * m).min(100.0);
        [
            self.rrc_established * m,
            self.erab_established * m,
            pct(self.prb_dl_pct),
            pct(self.prb_ul_pct),
            self.max_rrc * m,
            self.avg_rrc * m,
            pct(self.pdcch_cce_pct),
        ]
    }

    pub(crate) fn problems(&self) -> Vec<String> {
        let fields = [
            ("workload.rrc_established", self.rrc_established),
            ("workload.erab_established", self.erab_established),
            ("workload.max_rrc", self.max_rrc),
            ("workload.avg_rrc", self.avg_rrc),
            ("workload.prb_dl_pct", self.prb_dl_pct),
            ("workload.prb_ul_pct", self.prb_ul_pct),
            ("workload.pdcch_cce_pct", self.pdcch_cce_pct),
        ];
        fields
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(n, v)| format!("{n}: must be finite and >= 0, got {v}"))
            .collect()
    }
}

/// Uplink noise level: a floor plus a daily swing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferenceModel {
    pub floor_dbm: f64,
    pub daily_swing_db: f64,
    pub peak_hour: f64,
}

impl Default for InterferenceModel {
    fn default() -> Self {
        Self {
            floor_dbm: -115.0,
            daily_swing_db: 2.0,
            peak_hour: 20.0,
        }
    }
}

impl InterferenceModel {
    /// Noise-free level; never below the floor.
    pub fn level(&self, tf: &TimeFeatures) -> f64 {
        self.floor_dbm + 0.5 * self.daily_swing_db * (1.0 + daily_phase(self.peak_hour, tf))
    }

    pub(crate) fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !self.floor_dbm.is_finite() {
            p.push("interference.floor_dbm: must be finite".into());
        }
        if !(self.daily_swing_db.is_finite() && self.daily_swing_db >= 0.0) {
            p.push(format!("interference.daily_swing_db: must be >= 0, got {}", self.daily_swing_db));
        }
        if !(self.peak_hour.is_finite() && (0.0..24.0).contains(&self.peak_hour)) {
            p.push(format!("interference.peak_hour: must be in [0, 24), got {}", self.peak_hour));
        }
        p
    }
}

/// Whether a QoS metric falls (success) or rises (drop) with congestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QosSense {
    Success,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosCurve {
    pub sense: QosSense,
    pub ceiling: f64,
    pub depth: f64,
}

impl QosCurve {
    const fn success(ceiling: f64, depth: f64) -> Self {
        Self {
            sense: QosSense::Success,
            ceiling,
            depth,
        }
    }

    const fn drop(ceiling: f64, depth: f64) -> Self {
        Self {
            sense: QosSense::Drop,
            ceiling,
            depth,
        }
    }

    /// Success or retention level at congestion `c`.
    pub fn retention(&self, c: f64) -> f64 {
        (self.ceiling - self.depth * c).clamp(0.0, 1.0)
    }

    pub fn value(&self, c: f64) -> f64 {
        match self.sense {
            QosSense::Success => self.retention(c),
            QosSense::Drop => 1.0 - self.retention(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosModel {
    pub steepness: f64,
    /// Load at which the logistic is centered, as a fraction of capacity.
    pub midpoint: f64,
    /// Logistic slope per dB of interference above the floor.
    pub interference_gain: f64,
    /// Busy-hour swing of effective load: `u * (1 + busy_gain * phase)`.
    pub busy_gain: f64,
    pub busy_peak_hour: f64,
    /// One curve per QoS metric, in column order.
    pub curves: Vec<QosCurve>,
}

impl Default for QosModel {
    fn default() -> Self {
        Self {
            steepness: 8.0,
            midpoint: 0.6,
            interference_gain: 0.3,
            busy_gain: 0.1,
            busy_peak_hour: 20.0,
            curves: vec![
                QosCurve::drop(0.995, 0.04),     // drop_rate
                QosCurve::success(0.998, 0.05),  // conn_success_rate
                QosCurve::success(0.999, 0.04),  // rrc_conn_success_rate
                QosCurve::success(0.999, 0.05),  // erab_conn_success_rate
                QosCurve::drop(0.998, 0.02),     // erab_drop_rate_qci1
                QosCurve::success(0.999, 0.03),  // erab_conn_success_rate_qci1
                QosCurve::success(0.99, 0.08),   // ho_success_rate
                QosCurve::success(0.985, 0.1),   // volte_ho_success_rate
                QosCurve::drop(0.999, 0.06),     // paging_congestion_rate
            ],
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl QosModel {
    /// Normalized congestion for load fraction `u` and interference excess
    /// `v` dB; 0 at no load, 1 at capacity without interference.
    pub fn congestion(&self, u: f64, v: f64) -> f64 {
        let s = |u: f64, v: f64| sigmoid(self.steepness * (u - self.midpoint) + self.interference_gain * v);
        let lo = s(0.0, 0.0);
        (s(u, v) - lo) / (s(1.0, 0.0) - lo)
    }

    pub(crate) fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.steepness.is_finite() && self.steepness > 0.0) {
            p.push(format!("qos.steepness: must be > 0, got {}", self.steepness));
        }
        for (n, v) in [
            ("qos.midpoint", self.midpoint),
            ("qos.interference_gain", self.interference_gain),
            ("qos.busy_gain", self.busy_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                p.push(format!("{n}: must be finite and >= 0, got {v}"));
            }
        }
        if !(self.busy_peak_hour.is_finite() && (0.0..24.0).contains(&self.busy_peak_hour)) {
            p.push(format!("qos.busy_peak_hour: must be in [0, 24), got {}", self.busy_peak_hour));
        }
        if self.curves.len() != 9 {
            p.push(format!("qos.curves: need 9 curves, got {}", self.curves.len()));
        }
        for (k, c) in self.curves.iter().enumerate() {
            if !((0.0..=1.0).contains(&c.ceiling) && c.depth.is_finite() && c.depth >= 0.0) {
                p.push(format!("qos.curves[{k}]: ceiling must be in [0, 1] and depth >= 0"));
            }
        }
        p
    }
}

/// The 9 QoS metrics from a workload vector, uplink noise level and time.
/// Load is the largest utilization as a fraction of capacity;
/// interference excess is measured above `floor_dbm`.
pub fn qos_response(
    model: &QosModel,
    workload: &[f64; 7],
    interference_dbm: f64,
    floor_dbm: f64,
    tf: &TimeFeatures,
) -> [f64; 9] {
    let util = workload[2].max(workload[3]).max(workload[6]).max(0.0) / 100.0;
    let busy = 1.0 + model.busy_gain * daily_phase(model.busy_peak_hour, tf);
    let u = util * busy;
    let v = (interference_dbm - floor_dbm).max(0.0);
    let c = model.congestion(u, v);
    let mut out = [0.0; 9];
    for (o, curve) in out.iter_mut().zip(&model.curves) {
        *o = curve.value(c);
    }
    out
}
