//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records every value produced during a forward pass together
//! with the op that produced it. [`Tape::backward`] walks the record in
//! reverse and returns the gradient of a scalar with respect to each
//! parameter leaf. Scalars are `1 x 1` matrices.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    /// `a . b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Adds a `1 x m` row to every row.
    AddRow(Var, Var),
    /// Multiplies every row elementwise by a `1 x m` row.
    MulRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    Gelu(Var),
    /// Row normalization; caches `1 / std` per row.
    LayerNorm(Var, Vec<f64>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumSq(Var),
    /// `sum (a - target)^2 * mask` with constant target and mask.
    MaskedSse(Var, Array2<f64>, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    loaded: HashMap<usize, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            loaded: HashMap::new(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// Parameter `idx` as a leaf; loaded once per tape.
    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(&v) = self.loaded.get(&idx) {
            return v;
        }
        let v = self.push(self.params.get(idx).clone(), Op::Param(idx));
        self.loaded.insert(idx, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    /// Zero-mean, unit-variance rows (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= is;
            inv.push(is);
        }
        self.push(out, Op::LayerNorm(a, inv))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x * x).sum::<f64>();
        self.push(Array2::from_elem((1, 1), s), Op::SumSq(a))
    }

    pub fn masked_sse(&mut self, a: Var, target: Array2<f64>, mask: Array2<f64>) -> Var {
        let mut s = 0.0;
        Zip::from(self.value(a)).and(&target).and(&mask).for_each(|&p, &t, &w| {
            if w != 0.0 {
                s += (p - t) * (p - t) * w;
            }
        });
        self.push(Array2::from_elem((1, 1), s), Op::MaskedSse(a, target, mask))
    }

    /// Gradients of scalar `loss` with respect to each loaded parameter.
    pub fn backward(&self, loss: Var) -> HashMap<usize, Array2<f64>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = HashMap::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Const => {}
                Op::Param(idx) => {
                    out.insert(*idx, g);
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.dot(self.value(*b)));
                    acc(*b, g.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, &g * r);
                    acc(*row, dr);
                }
                Op::Scale(a, c) => acc(*a, g * *c),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let s = drow.sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|dv, &yv| *dv -= yv * s);
                    }
                    acc(*a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    Zip::from(&mut d).and(x).for_each(|dv, &x| {
                        let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                        *dv *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    });
                    acc(*a, d);
                }
                Op::LayerNorm(a, inv) => {
                    let y = &node.value;
                    let n = y.ncols() as f64;
                    let mut d = g;
                    for ((mut drow, yrow), &is) in d.rows_mut().into_iter().zip(y.rows()).zip(inv) {
                        let mean_d = drow.sum() / n;
                        let mean_dy = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|dv, &yv| *dv = is * (*dv - mean_d - yv * mean_dy));
                    }
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, g.slice(s![.., c..c + w]).to_owned());
                        c += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(p, g.slice(s![r..r + h, ..]).to_owned());
                        r += h;
                    }
                }
                Op::SumSq(a) => {
                    let gs = g[[0, 0]];
                    acc(*a, self.value(*a) * (2.0 * gs));
                }
                Op::MaskedSse(a, target, mask) => {
                    let gs = g[[0, 0]];
                    let mut d = self.value(*a) - target;
                    d *= mask;
                    d *= 2.0 * gs;
                    acc(*a, d);
                }
            }
        }
        out
    }
}
