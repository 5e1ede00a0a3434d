//! Central-difference validation of the analytic gradients.

use ndarray::Array2;

use crate::model::{ClusterModel, LossScale};
use crate::tape::Tape;
use crate::window::WindowSample;

/// Floor of the relative-error denominator, so that gradients that are
/// zero up to roundoff do not dominate.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn objective(model: &ClusterModel, sample: &WindowSample, mask: &Array2<f64>, scale: &LossScale) -> f64 {
    let mut tape = Tape::new(&model.params);
    let (loss, _) = model.objective(&mut tape, sample, mask, 1.0, scale);
    tape.scalar(loss)
}

/// Analytic gradients of the objective, one tensor per parameter.
pub fn analytic_gradients(model: &ClusterModel, sample: &WindowSample, mask: &Array2<f64>, scale: &LossScale) -> Vec<Array2<f64>> {
    let mut tape = Tape::new(&model.params);
    let (loss, _) = model.objective(&mut tape, sample, mask, 1.0, scale);
    let mut map = tape.backward(loss);
    (0..model.params.len())
        .map(|k| map.remove(&k).unwrap_or_else(|| Array2::zeros(model.params.get(k).raw_dim())))
        .collect()
}

/// Compares every parameter's analytic gradient with a central difference
/// of step `epsilon`; relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check(
    model: &ClusterModel,
    sample: &WindowSample,
    mask: &Array2<f64>,
    scale: &LossScale,
    epsilon: f64,
) -> GradCheck {
    let analytic = analytic_gradients(model, sample, mask, scale);
    let mut probe = model.clone();
    let mut best = GradCheck {
        max_relative_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..model.params.get(k).len() {
            let orig = model.params.get(k).as_slice().unwrap()[i];
            probe.params.get_mut(k).as_slice_mut().unwrap()[i] = orig + epsilon;
            let up = objective(&probe, sample, mask, scale);
            probe.params.get_mut(k).as_slice_mut().unwrap()[i] = orig - epsilon;
            let down = objective(&probe, sample, mask, scale);
            probe.params.get_mut(k).as_slice_mut().unwrap()[i] = orig;
            let n = (up - down) / (2.0 * epsilon);
            let a = grad.as_slice().unwrap()[i];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR);
            best.checked += 1;
            if rel > best.max_relative_error {
                best.max_relative_error = rel;
                best.worst = (model.params.name(k).to_string(), i);
                best.analytic = a;
                best.numeric = n;
            }
        }
    }
    best
}
