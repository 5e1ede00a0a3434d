//! Adjustment-free forecasting of cell metrics and its composition with
//! the analytic area multiplier.
//!
//! - [`graph`]: the graphical model over Parameters, Workload,
//!   Interference, QoS and Time.
//! - [`model`]: the per-cluster encoder-decoder attention model on a
//!   hand-written reverse-mode [`tape`].
//! - [`train`]: three-loss pre-training, fine-tuning and AdamW.
//! - [`pipeline`]: adjustment-aware prediction.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod gt;
pub mod model;
pub mod naive;
pub mod params;
pub mod persist;
pub mod pipeline;
pub mod scaler;
pub mod tape;
pub mod train;
pub mod window;

pub use error::{Error, Result};
pub use graph::{GraphicalModel, Node};
pub use gt::{ClusterForecasts, GraphicalTransformer};
pub use model::{ClusterModel, ModelConfig};
pub use pipeline::{predict_adjusted, predict_free, AdjustedForecast};
pub use scaler::Scaler;
pub use train::{fine_tune, pretrain, PretrainReport, TrainConfig, WindowSet};
pub use window::{masked_mse, WindowSample};
