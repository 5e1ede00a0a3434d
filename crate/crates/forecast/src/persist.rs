//! Binary model files.
//!
//! Layout, little-endian throughout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `CELLADJM` |
//! | 4     | format version (u32) |
//! | 4     | metadata length `n` (u32) |
//! | n     | UTF-8 JSON metadata: graph edges, scaler, per-cluster config and tensor names/shapes |
//! | 8 * k | every tensor's entries as f64, row-major, in metadata order |

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use celladj_core::frame::Cluster;

use crate::error::{Error, Result};
use crate::graph::{GraphicalModel, Node};
use crate::gt::GraphicalTransformer;
use crate::model::{ClusterModel, ModelConfig};
use crate::params::ParamSet;
use crate::scaler::Scaler;

pub const MAGIC: &[u8; 8] = b"CELLADJM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    cluster: Cluster,
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    edges: Vec<(Node, Node)>,
    scaler: Scaler,
    models: Vec<ModelMeta>,
}

pub fn write_model(gt: &GraphicalTransformer, mut out: impl Write) -> Result<()> {
    let meta = Metadata {
        edges: gt.graph.edges().to_vec(),
        scaler: gt.scaler.clone(),
        models: gt
            .models
            .iter()
            .map(|m| ModelMeta {
                cluster: m.cluster,
                config: m.config.clone(),
                tensors: m
                    .params
                    .iter()
                    .map(|(name, t)| TensorMeta {
                        name: name.to_string(),
                        rows: t.nrows(),
                        cols: t.ncols(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("metadata too large".into()))?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(gt.n_scalars() * 8);
    for m in &gt.models {
        for (_, t) in m.params.iter() {
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_model(mut input: impl Read) -> Result<GraphicalTransformer> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = read_u32(&mut input)? as usize;
    let mut json = vec![0u8; len];
    input
        .read_exact(&mut json)
        .map_err(|e| Error::Format(format!("truncated metadata: {e}")))?;
    let meta: Metadata = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let graph = GraphicalModel::new(meta.edges)?;
    let mut models = Vec::with_capacity(meta.models.len());
    for mm in meta.models {
        let mut params = ParamSet::default();
        for t in &mm.tensors {
            let mut raw = vec![0u8; t.rows * t.cols * 8];
            input
                .read_exact(&mut raw)
                .map_err(|e| Error::Format(format!("truncated tensor {}: {e}", t.name)))?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let a = Array2::from_shape_vec((t.rows, t.cols), values).map_err(|e| Error::Format(e.to_string()))?;
            params.push(t.name.clone(), a);
        }
        models.push(ClusterModel::from_params(&graph, mm.cluster, mm.config, params)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", rest.len())));
    }
    let order = graph.cluster_order();
    if models.iter().map(|m| m.cluster).collect::<Vec<_>>() != order {
        return Err(Error::Format("models are not one per cluster in topological order".into()));
    }
    Ok(GraphicalTransformer {
        graph,
        scaler: meta.scaler,
        models,
    })
}

pub fn save(gt: &GraphicalTransformer, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(gt, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<GraphicalTransformer> {
    let f = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(f))
}
