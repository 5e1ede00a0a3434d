//! Training and inference windows cut from scaled frames.

use ndarray::{s, Array2};

use celladj_core::frame::{Cluster, MetricFrame, TimeFeatures};

use crate::error::{invalid, Error, Result};
use crate::graph::{GraphicalModel, Node};

/// Look-back and horizon lengths.
pub const DEFAULT_INPUT_LEN: usize = 96;
pub const DEFAULT_OUTPUT_LEN: usize = 96;

/// One cluster's view of a window starting its forecast at row `t`.
/// Missing entries hold 0 with mask 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub cluster: Cluster,
    pub t: usize,
    /// Parent nodes in column order of `pa_src` / `pa_tgt`.
    pub parents: Vec<Node>,
    /// `I x d` own metrics over `[t - I, t - 1]`.
    pub x_src: Array2<f64>,
    pub mask_src: Array2<f64>,
    /// `I x p` parent series over the look-back.
    pub pa_src: Array2<f64>,
    /// `O x p` parent series over `[t, t + O - 1]`.
    pub pa_tgt: Array2<f64>,
    /// `O x d` targets; zeros when the future is unknown.
    pub y: Array2<f64>,
    pub mask_y: Array2<f64>,
}

impl WindowSample {
    pub fn input_len(&self) -> usize {
        self.x_src.nrows()
    }

    pub fn output_len(&self) -> usize {
        self.pa_tgt.nrows()
    }

    pub fn n_metrics(&self) -> usize {
        self.x_src.ncols()
    }

    /// Column range of `node` inside the parent block.
    pub fn parent_columns(&self, node: Node) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for &p in &self.parents {
            if p == node {
                return Some(start..start + p.width());
            }
            start += p.width();
        }
        None
    }

    /// Replaces a parent's target-span series, for inference on
    /// predicted parents.
    pub fn set_parent_target(&mut self, node: Node, values: &Array2<f64>) -> Result<()> {
        let cols = self
            .parent_columns(node)
            .ok_or_else(|| invalid(format!("{node:?} is not a parent of {:?}", self.cluster)))?;
        if values.dim() != (self.output_len(), cols.len()) {
            return Err(invalid(format!(
                "parent {node:?} target has shape {:?}, expected {:?}",
                values.dim(),
                (self.output_len(), cols.len())
            )));
        }
        self.pa_tgt.slice_mut(s![.., cols]).assign(values);
        Ok(())
    }

    /// Per-metric mean of the observed look-back; 0 for unobserved metrics.
    pub fn observed_mean(&self) -> Vec<f64> {
        (0..self.n_metrics())
            .map(|m| {
                let (mut s, mut n) = (0.0, 0.0);
                for r in 0..self.input_len() {
                    s += self.x_src[[r, m]] * self.mask_src[[r, m]];
                    n += self.mask_src[[r, m]];
                }
                if n > 0.0 {
                    s / n
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Cuts `cluster`'s window at `t` from a scaled frame. Rows past the
    /// end of the frame are left unobserved, which is how inference
    /// windows are built; time features for them follow the 15-minute grid.
    pub fn from_frame(
        graph: &GraphicalModel,
        cluster: Cluster,
        frame: &MetricFrame,
        t: usize,
        input_len: usize,
        output_len: usize,
    ) -> Result<Self> {
        if input_len == 0 || output_len == 0 || !input_len.is_multiple_of(2) {
            return Err(invalid(format!(
                "window lengths must be positive with an even look-back, got I={input_len} O={output_len}"
            )));
        }
        if t < input_len || t > frame.len() {
            return Err(invalid(format!(
                "forecast start {t} needs {input_len} history rows within a frame of {} rows",
                frame.len()
            )));
        }
        let parents = graph.series_parents(cluster);
        let cols = cluster.columns();
        let d = cols.len();
        let p: usize = parents.iter().map(|n| n.width()).sum();
        let timeline = MetricFrame::timeline(frame.timestamps[t - input_len], input_len + output_len);

        let own = |rows: std::ops::Range<usize>| {
            let mut x = Array2::zeros((rows.len(), d));
            let mut m = Array2::zeros((rows.len(), d));
            for (r, row) in rows.enumerate() {
                if row >= frame.len() {
                    continue;
                }
                for (c, col) in cols.clone().enumerate() {
                    if let Some(v) = frame.get(row, col) {
                        x[[r, c]] = v;
                        m[[r, c]] = 1.0;
                    }
                }
            }
            (x, m)
        };
        let parent = |rows: std::ops::Range<usize>| {
            let mut a = Array2::zeros((rows.len(), p));
            for (r, row) in rows.enumerate() {
                let mut c0 = 0;
                for node in &parents {
                    match node {
                        Node::Time => {
                            let f = TimeFeatures::of(timeline[row + input_len - t]).encode();
                            for (k, v) in f.iter().enumerate() {
                                a[[r, c0 + k]] = *v;
                            }
                        }
                        other => {
                            if row < frame.len() {
                                for (k, col) in other.cluster().unwrap().columns().enumerate() {
                                    a[[r, c0 + k]] = frame.get(row, col).unwrap_or(0.0);
                                }
                            }
                        }
                    }
                    c0 += node.width();
                }
            }
            a
        };
        let (x_src, mask_src) = own(t - input_len..t);
        let (y, mask_y) = own(t..t + output_len);
        let pa_src = parent(t - input_len..t);
        let pa_tgt = parent(t..t + output_len);
        Ok(Self {
            cluster,
            t,
            parents,
            x_src,
            mask_src,
            pa_src,
            pa_tgt,
            y,
            mask_y,
        })
    }
}

/// Forecast starts `t` in `range` whose full window `[t - I, t + O)` lies
/// inside the frame and carries no adjustment after its first row.
pub fn adjustment_free_starts(
    frame: &MetricFrame,
    input_len: usize,
    output_len: usize,
    range: std::ops::Range<usize>,
    stride: usize,
) -> Vec<usize> {
    let stride = stride.max(1);
    let end = range.end.min(frame.len());
    let first = range.start.max(input_len);
    (first..end)
        .step_by(stride)
        .filter(|&t| t + output_len <= end)
        .filter(|&t| !frame.has_adjustment_in(t - input_len + 1..t + output_len))
        .collect()
}

/// `sum (x - p)^2 w / sum w`, with the no-observed case reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    pub observed: f64,
}

impl MaskedLoss {
    pub fn no_observed(&self) -> bool {
        self.observed == 0.0
    }
}

pub fn masked_mse(truth: &Array2<f64>, prediction: &Array2<f64>, mask: &Array2<f64>) -> Result<MaskedLoss> {
    if truth.dim() != prediction.dim() || truth.dim() != mask.dim() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: truth {:?}, prediction {:?}, mask {:?}",
            truth.dim(),
            prediction.dim(),
            mask.dim()
        )));
    }
    let (mut sse, mut n) = (0.0, 0.0);
    for ((x, p), w) in truth.iter().zip(prediction).zip(mask) {
        if *w != 0.0 {
            sse += (x - p) * (x - p) * w;
            n += w;
        }
    }
    Ok(MaskedLoss {
        value: if n > 0.0 { sse / n } else { 0.0 },
        observed: n,
    })
}
