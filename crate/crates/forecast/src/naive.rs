//! Seasonal-naive reference forecaster.

use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::window::WindowSample;

/// Daily period at the 15-minute interval.
pub const DEFAULT_PERIOD: usize = 96;

/// Repeats the last `period` rows of the look-back over the horizon.
/// Missing source points fall back to the metric's observed look-back mean.
pub fn seasonal_naive(window: &WindowSample, period: usize) -> Result<Array2<f64>> {
    let i = window.input_len();
    if period == 0 || i < period {
        return Err(invalid(format!("seasonal naive needs I >= period, got I={i}, period={period}")));
    }
    let mean = window.observed_mean();
    let (o, d) = (window.output_len(), window.n_metrics());
    Ok(Array2::from_shape_fn((o, d), |(r, m)| {
        let src = i - period + r % period;
        if window.mask_src[[src, m]] != 0.0 {
            window.x_src[[src, m]]
        } else {
            mean[m]
        }
    }))
}
