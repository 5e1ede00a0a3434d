//! Scale-only preprocessing: each metric is divided by its largest
//! observed magnitude, so multiplicative effects survive scaling.

use serde::{Deserialize, Serialize};

use celladj_core::frame::{MetricFrame, N_METRICS};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub scales: Vec<f64>,
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            scales: vec![1.0; N_METRICS],
        }
    }

    /// Per-metric max of `|x|` over observed points of `frames`, restricted
    /// to rows `..limit` when given; 1 where a metric has no nonzero
    /// observation.
    pub fn fit(frames: &[&MetricFrame], limit: Option<usize>) -> Result<Self> {
        if frames.iter().all(|f| f.is_empty()) {
            return Err(Error::Empty("no training rows to fit a scaler".into()));
        }
        let mut scales = vec![0.0f64; N_METRICS];
        for f in frames {
            let end = limit.map_or(f.len(), |l| l.min(f.len()));
            for t in 0..end {
                for (m, s) in scales.iter_mut().enumerate() {
                    if let Some(v) = f.get(t, m) {
                        *s = s.max(v.abs());
                    }
                }
            }
        }
        for s in scales.iter_mut() {
            if !(*s > 0.0 && s.is_finite()) {
                *s = 1.0;
            }
        }
        Ok(Self { scales })
    }

    pub fn scale(&self, metric: usize, v: f64) -> f64 {
        v / self.scales[metric]
    }

    pub fn unscale(&self, metric: usize, v: f64) -> f64 {
        v * self.scales[metric]
    }

    /// Scaled copy of a frame; masks are kept as is.
    pub fn apply(&self, frame: &MetricFrame) -> MetricFrame {
        self.map(frame, |m, v| self.scale(m, v))
    }

    pub fn invert(&self, frame: &MetricFrame) -> MetricFrame {
        self.map(frame, |m, v| self.unscale(m, v))
    }

    fn map(&self, frame: &MetricFrame, f: impl Fn(usize, f64) -> f64) -> MetricFrame {
        let mut out = frame.clone();
        for t in 0..frame.len() {
            for m in 0..N_METRICS {
                if let Some(v) = frame.get(t, m) {
                    out.set(t, m, Some(f(m, v)));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn fit_and_round_trip() {
        let start = chrono::Utc.with_ymd_and_hms(2022, 8, 1, 0, 0, 0).unwrap();
        let mut f = MetricFrame::new(0, MetricFrame::timeline(start, 3));
        for (t, v) in [40.0, 80.0, 20.0].iter().enumerate() {
            f.set(t, 2, Some(*v));
            f.set(t, 7, Some(-110.0 - t as f64));
        }
        let s = Scaler::fit(&[&f], None).unwrap();
        assert_eq!(s.scales[2], 80.0);
        assert_eq!(s.scales[7], 112.0);
        assert_eq!(s.scales[0], 1.0);
        let scaled = s.apply(&f);
        assert_eq!(scaled.get(1, 2), Some(1.0));
        let back = s.invert(&scaled);
        for t in 0..3 {
            for m in 0..N_METRICS {
                match (f.get(t, m), back.get(t, m)) {
                    (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12 * a.abs()),
                    (a, b) => assert_eq!(a, b),
                }
            }
        }
        assert_eq!(Scaler::fit(&[&f], Some(1)).unwrap().scales[2], 40.0);
    }
}
