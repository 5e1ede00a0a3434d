//! Core numerics for predicting how transmission-power and CIO adjustments
//! change a cell's monitored time series.
//!
//! - [`geometry`]: Apollonius-circle cell boundaries and the analytic
//!   area multiplier `alpha(beta | theta)` with its Monte Carlo oracle.
//! - [`mwvoronoi`]: multiplicatively weighted Voronoi rasters, region
//!   accumulators and density reconstruction from accumulators.
//! - [`simulator`]: a deterministic synthetic cellular scenario generator.
//! - [`frame`]: the monitored metric schema and per-cell time series frames.
//! - [`evalmetrics`]: missing-aware RMSE / sMAPE and case aggregation.

pub mod error;
pub mod evalmetrics;
pub mod frame;
pub mod geometry;
pub mod mwvoronoi;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::AdjustmentDelta;
pub use frame::{Cluster, Metric, MetricFrame};
