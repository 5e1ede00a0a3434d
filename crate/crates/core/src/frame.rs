//! Monitored metric schema and per-cell multivariate time series.

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::AdjustmentDelta;

/// Sampling interval of every frame.
pub const INTERVAL_MINUTES: i64 = 15;
/// Steps per day at the fixed interval.
pub const STEPS_PER_DAY: usize = 96;
pub const STEPS_PER_WEEK: usize = 7 * STEPS_PER_DAY;

/// Variable clusters of the graphical model that carry metric series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cluster {
    Workload,
    Interference,
    Qos,
}

impl Cluster {
    pub const ALL: [Cluster; 3] = [Cluster::Workload, Cluster::Interference, Cluster::Qos];

    pub fn symbol(self) -> char {
        match self {
            Cluster::Workload => 'W',
            Cluster::Interference => 'I',
            Cluster::Qos => 'Q',
        }
    }

    pub fn metrics(self) -> &'static [Metric] {
        let all = &Metric::ALL;
        match self {
            Cluster::Workload => &all[0..7],
            Cluster::Interference => &all[7..8],
            Cluster::Qos => &all[8..17],
        }
    }

    /// Column range of this cluster inside a full frame row.
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            Cluster::Workload => 0..7,
            Cluster::Interference => 7..8,
            Cluster::Qos => 8..17,
        }
    }
}

/// How a metric is bounded; drives clamping in the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Count,
    Percent,
    Rate,
    Decibel,
}

macro_rules! metrics {
    ($($variant:ident => $name:literal, $kind:ident;)*) => {
        /// The 17 monitored metrics, in column order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum Metric { $($variant),* }

        impl Metric {
            pub const ALL: [Metric; 17] = [$(Metric::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(Metric::$variant => $name),* }
            }

            pub fn kind(self) -> MetricKind {
                match self { $(Metric::$variant => MetricKind::$kind),* }
            }
        }
    };
}

metrics! {
    RrcConnEstablished => "rrc_conn_established", Count;
    ErabConnEstablished => "erab_conn_established", Count;
    PrbDlUtilization => "prb_dl_utilization", Percent;
    PrbUlUtilization => "prb_ul_utilization", Percent;
    MaxRrcConn => "max_rrc_conn", Count;
    AvgRrcConn => "avg_rrc_conn", Count;
    PdcchCceUtilization => "pdcch_cce_utilization", Percent;
    UlPrbNoiseLevel => "ul_prb_noise_level_dbm", Decibel;
    DropRate => "drop_rate", Rate;
    ConnSuccessRate => "conn_success_rate", Rate;
    RrcConnSuccessRate => "rrc_conn_success_rate", Rate;
    ErabConnSuccessRate => "erab_conn_success_rate", Rate;
    ErabDropRateQci1 => "erab_drop_rate_qci1", Rate;
    ErabConnSuccessRateQci1 => "erab_conn_success_rate_qci1", Rate;
    HoSuccessRate => "ho_success_rate", Rate;
    VolteHoSuccessRate => "volte_ho_success_rate", Rate;
    PagingCongestionRate => "paging_congestion_rate", Rate;
}

pub const N_METRICS: usize = 17;

impl Metric {
    pub fn index(self) -> usize {
        Metric::ALL.iter().position(|&m| m == self).unwrap()
    }

    pub fn cluster(self) -> Cluster {
        let i = self.index();
        Cluster::ALL
            .into_iter()
            .find(|c| c.columns().contains(&i))
            .unwrap()
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Calendar features extracted from a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeFeatures {
    /// Monday = 0.
    pub day_of_week: u32,
    pub hour: u32,
    pub minute: u32,
}

impl TimeFeatures {
    pub fn of(ts: DateTime<Utc>) -> Self {
        Self {
            day_of_week: ts.weekday().num_days_from_monday(),
            hour: ts.hour(),
            minute: ts.minute(),
        }
    }

    /// Sine/cosine pairs for day-of-week, hour and minute.
    pub fn encode(&self) -> [f64; 6] {
        use std::f64::consts::TAU;
        let d = TAU * self.day_of_week as f64 / 7.0;
        let h = TAU * self.hour as f64 / 24.0;
        let m = TAU * self.minute as f64 / 60.0;
        [d.sin(), d.cos(), h.sin(), h.cos(), m.sin(), m.cos()]
    }

    /// Fractional hour of day.
    pub fn hour_of_day(&self) -> f64 {
        self.hour as f64 + self.minute as f64 / 60.0
    }
}

pub const N_TIME_FEATURES: usize = 6;

/// An applied parameter change, effective from row `index` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentMark {
    pub index: usize,
    pub delta: AdjustmentDelta,
}

/// One cell's multivariate series: row-major values with a parallel
/// observation mask. Missing points hold `0.0` and mask `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFrame {
    pub cell_id: u32,
    pub timestamps: Vec<DateTime<Utc>>,
    values: Vec<f64>,
    observed: Vec<bool>,
    pub adjustments: Vec<AdjustmentMark>,
}

impl MetricFrame {
    pub fn new(cell_id: u32, timestamps: Vec<DateTime<Utc>>) -> Self {
        let n = timestamps.len() * N_METRICS;
        Self {
            cell_id,
            timestamps,
            values: vec![0.0; n],
            observed: vec![false; n],
            adjustments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn get(&self, row: usize, metric: usize) -> Option<f64> {
        let k = row * N_METRICS + metric;
        self.observed[k].then(|| self.values[k])
    }

    /// Stored value regardless of the mask (`0.0` where missing).
    pub fn value(&self, row: usize, metric: usize) -> f64 {
        self.values[row * N_METRICS + metric]
    }

    pub fn is_observed(&self, row: usize, metric: usize) -> bool {
        self.observed[row * N_METRICS + metric]
    }

    pub fn set(&mut self, row: usize, metric: usize, value: Option<f64>) {
        let k = row * N_METRICS + metric;
        match value {
            Some(v) => {
                self.values[k] = v;
                self.observed[k] = true;
            }
            None => {
                self.values[k] = 0.0;
                self.observed[k] = false;
            }
        }
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * N_METRICS..(row + 1) * N_METRICS]
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        &self.observed[row * N_METRICS..(row + 1) * N_METRICS]
    }

    pub fn time_features(&self, row: usize) -> TimeFeatures {
        TimeFeatures::of(self.timestamps[row])
    }

    /// Index of the first row carrying an adjustment, if any.
    pub fn first_adjustment(&self) -> Option<usize> {
        self.adjustments.iter().map(|a| a.index).min()
    }

    /// Adjustment applied exactly at `row`.
    pub fn adjustment_at(&self, row: usize) -> Option<AdjustmentDelta> {
        self.adjustments.iter().find(|a| a.index == row).map(|a| a.delta)
    }

    /// Whether any adjustment takes effect in `start..end`.
    pub fn has_adjustment_in(&self, range: std::ops::Range<usize>) -> bool {
        self.adjustments.iter().any(|a| range.contains(&a.index))
    }

    /// Checks timestamps are strictly increasing on the 15-minute grid.
    pub fn validate_timeline(&self) -> Result<()> {
        let step = Duration::minutes(INTERVAL_MINUTES);
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if w[1] - w[0] != step {
                return Err(invalid(format!(
                    "row {}: timestamp {} is not {} minutes after {}",
                    i + 1,
                    w[1].to_rfc3339(),
                    INTERVAL_MINUTES,
                    w[0].to_rfc3339()
                )));
            }
        }
        Ok(())
    }

    /// Builds a regular timeline of `len` steps starting at `start`.
    pub fn timeline(start: DateTime<Utc>, len: usize) -> Vec<DateTime<Utc>> {
        (0..len)
            .map(|i| start + Duration::minutes(INTERVAL_MINUTES * i as i64))
            .collect()
    }
}
