//! The graphical model over variable clusters of a single cell.

use serde::{Deserialize, Serialize};

use celladj_core::frame::{Cluster, N_TIME_FEATURES};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Parameters,
    Workload,
    Interference,
    Qos,
    Time,
}

impl Node {
    pub const ALL: [Node; 5] = [Node::Parameters, Node::Workload, Node::Interference, Node::Qos, Node::Time];

    pub fn cluster(self) -> Option<Cluster> {
        match self {
            Node::Workload => Some(Cluster::Workload),
            Node::Interference => Some(Cluster::Interference),
            Node::Qos => Some(Cluster::Qos),
            Node::Parameters | Node::Time => None,
        }
    }

    pub fn of(cluster: Cluster) -> Node {
        match cluster {
            Cluster::Workload => Node::Workload,
            Cluster::Interference => Node::Interference,
            Cluster::Qos => Node::Qos,
        }
    }

    /// Columns this node contributes to a model input row. Parameters
    /// enter through the area multiplier, not as a series.
    pub fn width(self) -> usize {
        match self {
            Node::Parameters => 0,
            Node::Time => N_TIME_FEATURES,
            other => other.cluster().unwrap().columns().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphicalModel {
    edges: Vec<(Node, Node)>,
    order: Vec<Node>,
}

impl GraphicalModel {
    /// Validates acyclicity and computes a topological order.
    pub fn new(edges: Vec<(Node, Node)>) -> Result<Self> {
        if let Some((a, b)) = edges.iter().find(|(a, b)| a == b) {
            return Err(invalid(format!("self loop {a:?} -> {b:?}")));
        }
        let mut order = Vec::with_capacity(Node::ALL.len());
        let mut remaining: Vec<Node> = Node::ALL.to_vec();
        while !remaining.is_empty() {
            let ready = remaining
                .iter()
                .position(|&n| !edges.iter().any(|&(a, b)| b == n && remaining.contains(&a)))
                .ok_or_else(|| invalid("graphical model has a cycle"))?;
            order.push(remaining.remove(ready));
        }
        Ok(Self { edges, order })
    }

    /// P -> W, W -> Q, I -> Q, T -> {W, I, Q}.
    pub fn standard() -> Self {
        use Node::*;
        Self::new(vec![
            (Parameters, Workload),
            (Workload, Qos),
            (Interference, Qos),
            (Time, Workload),
            (Time, Interference),
            (Time, Qos),
        ])
        .expect("standard graph is acyclic")
    }

    pub fn edges(&self) -> &[(Node, Node)] {
        &self.edges
    }

    /// Parents of `node` in declaration order.
    pub fn parents(&self, node: Node) -> Vec<Node> {
        let mut p: Vec<Node> = self.edges.iter().filter(|e| e.1 == node).map(|e| e.0).collect();
        p.sort();
        p
    }

    pub fn topological_order(&self) -> &[Node] {
        &self.order
    }

    /// Parents fed to a cluster's model as series, in declaration order.
    pub fn series_parents(&self, cluster: Cluster) -> Vec<Node> {
        self.parents(Node::of(cluster))
            .into_iter()
            .filter(|n| n.width() > 0)
            .collect()
    }

    /// Whether `cluster`'s forecast is scaled by the area multiplier.
    pub fn takes_multiplier(&self, cluster: Cluster) -> bool {
        self.parents(Node::of(cluster)).contains(&Node::Parameters)
    }

    /// Clusters in topological order.
    pub fn cluster_order(&self) -> Vec<Cluster> {
        self.order.iter().filter_map(|n| n.cluster()).collect()
    }

    /// Rejects any input series that is not a parent of `cluster`.
    pub fn check_inputs(&self, cluster: Cluster, inputs: &[Node]) -> Result<()> {
        let allowed = self.series_parents(cluster);
        for n in inputs {
            if !allowed.contains(n) {
                return Err(invalid(format!(
                    "{n:?} is not a parent of {cluster:?}; allowed inputs are {allowed:?}"
                )));
            }
        }
        Ok(())
    }
}
