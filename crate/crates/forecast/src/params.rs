//! Named parameter tensors and their gradients.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn get(&self, idx: usize) -> &Array2<f64> {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    /// Xavier-uniform matrix.
    pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
    }
}
