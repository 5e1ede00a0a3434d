//! The per-cluster models wired together by the graphical model.

use ndarray::Array2;

use celladj_core::frame::{Cluster, MetricFrame};

use crate::error::{invalid, Result};
use crate::graph::GraphicalModel;
use crate::model::{ClusterModel, ModelConfig};
use crate::scaler::Scaler;
use crate::window::WindowSample;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphicalTransformer {
    pub graph: GraphicalModel,
    pub scaler: Scaler,
    /// One model per cluster, in the graph's topological order.
    pub models: Vec<ClusterModel>,
}

/// Scaled forecasts of the three clusters, `O x d` each.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterForecasts {
    pub workload: Array2<f64>,
    pub interference: Array2<f64>,
    pub qos: Array2<f64>,
}

impl ClusterForecasts {
    pub fn get(&self, cluster: Cluster) -> &Array2<f64> {
        match cluster {
            Cluster::Workload => &self.workload,
            Cluster::Interference => &self.interference,
            Cluster::Qos => &self.qos,
        }
    }

    pub fn get_mut(&mut self, cluster: Cluster) -> &mut Array2<f64> {
        match cluster {
            Cluster::Workload => &mut self.workload,
            Cluster::Interference => &mut self.interference,
            Cluster::Qos => &mut self.qos,
        }
    }
}

impl GraphicalTransformer {
    /// Fresh models; cluster `k` in topological order is seeded with
    /// `seed + k`.
    pub fn new(graph: GraphicalModel, scaler: Scaler, config: ModelConfig, seed: u64) -> Result<Self> {
        let models = graph
            .cluster_order()
            .into_iter()
            .enumerate()
            .map(|(k, c)| ClusterModel::new(&graph, c, config.clone(), seed.wrapping_add(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { graph, scaler, models })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.models[0].config
    }

    pub fn model(&self, cluster: Cluster) -> &ClusterModel {
        self.models.iter().find(|m| m.cluster == cluster).expect("every cluster has a model")
    }

    pub fn model_mut(&mut self, cluster: Cluster) -> &mut ClusterModel {
        self.models.iter_mut().find(|m| m.cluster == cluster).expect("every cluster has a model")
    }

    pub fn n_scalars(&self) -> usize {
        self.models.iter().map(|m| m.params.n_scalars()).sum()
    }

    /// Windows of every cluster at `t` from an already scaled frame.
    pub fn windows(&self, scaled: &MetricFrame, t: usize) -> Result<Vec<WindowSample>> {
        let c = self.config();
        self.models
            .iter()
            .map(|m| WindowSample::from_frame(&self.graph, m.cluster, scaled, t, c.input_len, c.output_len))
            .collect()
    }

    /// Propagates forecasts along the topological order: each cluster's
    /// target-span parent series are replaced by upstream forecasts, and
    /// `multiplier(cluster)` scales a cluster's output before it is passed
    /// on.
    pub fn propagate(
        &self,
        mut windows: Vec<WindowSample>,
        multiplier: impl Fn(Cluster) -> f64,
    ) -> Result<ClusterForecasts> {
        let c = &self.config();
        let mut out = ClusterForecasts {
            workload: Array2::zeros((c.output_len, Cluster::Workload.columns().len())),
            interference: Array2::zeros((c.output_len, Cluster::Interference.columns().len())),
            qos: Array2::zeros((c.output_len, Cluster::Qos.columns().len())),
        };
        for model in &self.models {
            let pos = windows
                .iter()
                .position(|w| w.cluster == model.cluster)
                .ok_or_else(|| invalid(format!("no window for {:?}", model.cluster)))?;
            let mut w = windows.swap_remove(pos);
            for parent in w.parents.clone() {
                if let Some(pc) = parent.cluster() {
                    w.set_parent_target(parent, out.get(pc))?;
                }
            }
            let mut y = model.forecast(&w)?;
            let a = multiplier(model.cluster);
            if a != 1.0 {
                y.mapv_inplace(|v| v * a);
            }
            *out.get_mut(model.cluster) = y;
        }
        Ok(out)
    }

    /// Writes scaled cluster forecasts into an unscaled frame starting at
    /// `start` (the timestamp of row `t`).
    pub fn to_frame(&self, cell_id: u32, start: chrono::DateTime<chrono::Utc>, f: &ClusterForecasts) -> MetricFrame {
        let o = f.workload.nrows();
        let mut frame = MetricFrame::new(cell_id, MetricFrame::timeline(start, o));
        for cluster in Cluster::ALL {
            let y = f.get(cluster);
            for (k, col) in cluster.columns().enumerate() {
                for r in 0..o {
                    frame.set(r, col, Some(self.scaler.unscale(col, y[[r, k]])));
                }
            }
        }
        frame
    }
}
