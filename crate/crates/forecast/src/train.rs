//! Pre-training and fine-tuning with AdamW.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use celladj_core::frame::{Cluster, MetricFrame};
use celladj_core::geometry::{area_multiplier, AdjustmentDelta};

use crate::error::{invalid, Error, Result};
use crate::gt::GraphicalTransformer;
use crate::model::{sample_mask, ClusterModel, LossParts, LossScale};
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::window::{adjustment_free_starts, WindowSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub forecast: f64,
    pub reconstruction: f64,
    pub alignment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            forecast: 1.0,
            reconstruction: 1.0,
            alignment: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Optimizer steps of linear ramp from 0 to the base rate.
    pub warmup_steps: usize,
    /// Per-epoch rate factor applied from the second epoch on.
    pub decay: f64,
    /// Global gradient-norm clip per cluster model.
    pub clip_norm: Option<f64>,
    /// Overrides the model's mask ratio when set.
    pub mask_ratio: Option<f64>,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Windows in the fixed evaluation subset used for initial/final loss.
    pub eval_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 0,
            decay: 0.97,
            clip_norm: Some(1.0),
            mask_ratio: None,
            seed: 0,
            loss_weights: LossWeights::default(),
            eval_windows: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be positive".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bad.push("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            bad.push(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if self.weight_decay < 0.0 {
            bad.push("weight_decay must be non-negative".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                bad.push("clip_norm must be positive".into());
            }
        }
        if let Some(r) = self.mask_ratio {
            if !(0.0..1.0).contains(&r) {
                bad.push(format!("mask_ratio must lie in [0, 1), got {r}"));
            }
        }
        let w = self.loss_weights;
        if [w.forecast, w.reconstruction, w.alignment].iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            bad.push("loss weights must be finite and non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(invalid(bad.join("; ")))
        }
    }

    /// Learning rate of optimizer step `step` (0-based) in `epoch`.
    pub fn rate(&self, epoch: usize, step: usize) -> f64 {
        let ramp = if step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        self.learning_rate * ramp * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEntry {
    pub frame: usize,
    pub t: usize,
    /// Area multiplier applied to the workload forecast.
    pub multiplier: f64,
}

/// Scaled frames and the forecast starts drawn from them.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub frames: Vec<MetricFrame>,
    pub entries: Vec<WindowEntry>,
}

impl WindowSet {
    /// Adjustment-free windows with forecast starts in `range`; frames are
    /// unscaled and scaled here with the model's scaler.
    pub fn adjustment_free(
        gt: &GraphicalTransformer,
        frames: &[MetricFrame],
        range: std::ops::Range<usize>,
        stride: usize,
    ) -> Result<Self> {
        let c = gt.config();
        let scaled: Vec<MetricFrame> = frames.iter().map(|f| gt.scaler.apply(f)).collect();
        let entries: Vec<WindowEntry> = scaled
            .iter()
            .enumerate()
            .flat_map(|(k, f)| {
                adjustment_free_starts(f, c.input_len, c.output_len, range.clone(), stride)
                    .into_iter()
                    .map(move |t| WindowEntry {
                        frame: k,
                        t,
                        multiplier: 1.0,
                    })
            })
            .collect();
        if entries.is_empty() {
            return Err(Error::Empty("no adjustment-free windows in range".into()));
        }
        Ok(Self { frames: scaled, entries })
    }

    /// Windows whose forecast starts at an annotated adjustment, with an
    /// adjustment-free look-back and no further adjustment in the horizon.
    /// `theta_deg` gives each cell's sector angle.
    pub fn adjusted(gt: &GraphicalTransformer, frames: &[MetricFrame], theta_deg: impl Fn(u32) -> f64) -> Result<Self> {
        let c = gt.config();
        let scaled: Vec<MetricFrame> = frames.iter().map(|f| gt.scaler.apply(f)).collect();
        let mut entries = Vec::new();
        for (k, f) in scaled.iter().enumerate() {
            for mark in &f.adjustments {
                let t = mark.index;
                if t < c.input_len || t + c.output_len > f.len() {
                    continue;
                }
                if f.has_adjustment_in(t - c.input_len + 1..t) || f.has_adjustment_in(t + 1..t + c.output_len) {
                    continue;
                }
                entries.push(WindowEntry {
                    frame: k,
                    t,
                    multiplier: multiplier_for(mark.delta, theta_deg(f.cell_id))?,
                });
            }
        }
        if entries.is_empty() {
            return Err(invalid("no windows with adjustment annotations to fine-tune on"));
        }
        Ok(Self { frames: scaled, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample(&self, gt: &GraphicalTransformer, cluster: Cluster, entry: &WindowEntry) -> Result<WindowSample> {
        let c = gt.config();
        WindowSample::from_frame(&gt.graph, cluster, &self.frames[entry.frame], entry.t, c.input_len, c.output_len)
    }

    /// Evenly spaced subset of at most `n` entry indices.
    pub fn evaluation_subset(&self, n: usize) -> Vec<usize> {
        let len = self.entries.len();
        if n == 0 || len == 0 {
            return Vec::new();
        }
        if n >= len {
            return (0..len).collect();
        }
        (0..n).map(|k| k * len / n).collect()
    }
}

/// Area multiplier of an adjustment at sector angle `theta_deg`.
pub fn multiplier_for(delta: AdjustmentDelta, theta_deg: f64) -> Result<f64> {
    let beta = delta.beta()?;
    Ok(area_multiplier(beta, theta_deg.to_radians())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub workload: f64,
    pub interference: f64,
    pub qos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Objective on the fixed evaluation subset before training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trace: Vec<TraceRow>,
    pub windows: usize,
}

impl PretrainReport {
    pub fn write_trace_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,step,learning_rate,loss,workload,interference,qos")?;
        for r in &self.trace {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e}",
                r.epoch, r.step, r.learning_rate, r.loss, r.workload, r.interference, r.qos
            )?;
        }
        Ok(())
    }

    /// Trailing moving average of the step losses.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let losses: Vec<f64> = self.trace.iter().map(|r| r.loss).collect();
        (0..losses.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }
}

struct AdamW {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl AdamW {
    fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &[Array2<f64>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * (mh / (vh.sqrt() + cfg.adam_eps) + cfg.weight_decay * *p);
            });
        }
    }
}

/// Seeded generator for one sample's reconstruction mask.
fn mask_rng(seed: u64, cluster_slot: usize, epoch: u64, entry: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(cluster_slot as u64));
    rng.set_stream((epoch << 32) | entry as u64);
    rng
}

const EVAL_EPOCH: u64 = u32::MAX as u64;

struct Prepared {
    sample: WindowSample,
    mask: Array2<f64>,
    multiplier: f64,
}

/// Batch objective and summed gradients for one cluster model.
struct BatchResult {
    loss: f64,
    grads: Vec<Array2<f64>>,
}

fn prepare(
    gt: &GraphicalTransformer,
    set: &WindowSet,
    slot: usize,
    ratio: f64,
    seed: u64,
    epoch: u64,
    batch: &[usize],
) -> Result<Vec<Prepared>> {
    let model = &gt.models[slot];
    let c = &model.config;
    let takes = gt.graph.takes_multiplier(model.cluster);
    batch
        .iter()
        .map(|&e| {
            let entry = &set.entries[e];
            let sample = set.sample(gt, model.cluster, entry)?;
            let mut rng = mask_rng(seed, slot, epoch, e);
            let mask = sample_mask(c.input_len, model.n_metrics, ratio, &mut rng);
            Ok(Prepared {
                sample,
                mask,
                multiplier: if takes { entry.multiplier } else { 1.0 },
            })
        })
        .collect()
}

fn loss_scale(model: &ClusterModel, batch: &[Prepared], w: &LossWeights) -> LossScale {
    let half = model.config.half();
    let f: f64 = batch.iter().map(|p| p.sample.mask_y.sum()).sum();
    let r: f64 = batch
        .iter()
        .map(|p| {
            let m = p.mask.slice(ndarray::s![half.., ..]);
            let o = p.sample.mask_src.slice(ndarray::s![half.., ..]);
            (&m * &o).sum()
        })
        .sum();
    let a = (batch.len() * model.alignment_size()) as f64;
    let div = |weight: f64, n: f64| if n > 0.0 { weight / n } else { 0.0 };
    LossScale {
        forecast: div(w.forecast, f),
        reconstruction: div(w.reconstruction, r),
        alignment: div(w.alignment, a),
    }
}

fn batch_gradient(model: &ClusterModel, batch: &[Prepared], scale: &LossScale, with_grads: bool) -> BatchResult {
    let per: Vec<(f64, Option<Vec<Array2<f64>>>)> = batch
        .par_iter()
        .map(|p| {
            let mut tape = Tape::new(&model.params);
            let (loss, _) = model.objective(&mut tape, &p.sample, &p.mask, p.multiplier, scale);
            let value = tape.scalar(loss);
            let grads = with_grads.then(|| {
                let mut map = tape.backward(loss);
                (0..model.params.len())
                    .map(|k| map.remove(&k).unwrap_or_else(|| Array2::zeros(model.params.get(k).raw_dim())))
                    .collect()
            });
            (value, grads)
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = if with_grads { model.params.zeros_like() } else { Vec::new() };
    for (v, g) in per {
        loss += v;
        if let Some(g) = g {
            for (acc, d) in grads.iter_mut().zip(g) {
                *acc += &d;
            }
        }
    }
    BatchResult { loss, grads }
}

/// Summed per-cluster objective over the given entries, as one batch.
fn evaluate(gt: &GraphicalTransformer, set: &WindowSet, entries: &[usize], cfg: &TrainConfig) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (slot, model) in gt.models.iter().enumerate() {
        let ratio = cfg.mask_ratio.unwrap_or(model.config.mask_ratio);
        let batch = prepare(gt, set, slot, ratio, cfg.seed, EVAL_EPOCH, entries)?;
        let scale = loss_scale(model, &batch, &cfg.loss_weights);
        out[slot] = batch_gradient(model, &batch, &scale, false).loss;
    }
    Ok(out)
}

/// Objective parts of one sample, unweighted; for inspection and tests.
pub fn sample_parts(model: &ClusterModel, sample: &WindowSample, mask: &Array2<f64>, multiplier: f64) -> LossParts {
    let mut tape = Tape::new(&model.params);
    let unit = LossScale {
        forecast: 1.0,
        reconstruction: 1.0,
        alignment: 1.0,
    };
    model.objective(&mut tape, sample, mask, multiplier, &unit).1
}

fn by_slot(gt: &GraphicalTransformer, v: [f64; 3]) -> (f64, f64, f64) {
    let get = |c: Cluster| v[gt.models.iter().position(|m| m.cluster == c).unwrap()];
    (get(Cluster::Workload), get(Cluster::Interference), get(Cluster::Qos))
}

fn run(gt: &mut GraphicalTransformer, set: &WindowSet, cfg: &TrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("empty window set".into()));
    }
    let eval = set.evaluation_subset(cfg.eval_windows);
    let initial: f64 = evaluate(gt, set, &eval, cfg)?.iter().sum();
    if !initial.is_finite() {
        return Err(Error::NonFinite(format!("initial evaluation loss is {initial}")));
    }
    let mut opts: Vec<AdamW> = gt.models.iter().map(|m| AdamW::new(&m.params)).collect();
    let mut trace = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let lr = cfg.rate(epoch, step);
            let mut losses = [0.0; 3];
            for slot in 0..gt.models.len() {
                let model = &gt.models[slot];
                let ratio = cfg.mask_ratio.unwrap_or(model.config.mask_ratio);
                let prepared = prepare(gt, set, slot, ratio, cfg.seed, epoch as u64, batch)?;
                let scale = loss_scale(model, &prepared, &cfg.loss_weights);
                let BatchResult { loss, mut grads } = batch_gradient(model, &prepared, &scale, true);
                let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
                if !loss.is_finite() || !norm.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "{:?} model: loss {loss}, gradient norm {norm} at epoch {epoch}, step {step}, lr {lr:e}",
                        model.cluster
                    )));
                }
                if let Some(c) = cfg.clip_norm {
                    if norm > c {
                        let f = c / norm;
                        grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * f));
                    }
                }
                losses[slot] = loss;
                opts[slot].step(&mut gt.models[slot].params, &grads, lr, cfg);
            }
            let (w, i, q) = by_slot(gt, losses);
            trace.push(TraceRow {
                epoch,
                step,
                learning_rate: lr,
                loss: losses.iter().sum(),
                workload: w,
                interference: i,
                qos: q,
            });
            step += 1;
        }
    }
    let final_loss: f64 = evaluate(gt, set, &eval, cfg)?.iter().sum();
    if !final_loss.is_finite() {
        return Err(Error::NonFinite(format!("final evaluation loss is {final_loss}")));
    }
    Ok(PretrainReport {
        initial_loss: initial,
        final_loss,
        trace,
        windows: set.len(),
    })
}

/// Minimizes forecast + reconstruction + alignment losses on
/// adjustment-free windows.
pub fn pretrain(gt: &mut GraphicalTransformer, set: &WindowSet, cfg: &TrainConfig) -> Result<PretrainReport> {
    if set.entries.iter().any(|e| e.multiplier != 1.0) {
        return Err(invalid("pre-training takes adjustment-free windows only"));
    }
    run(gt, set, cfg)
}

/// Continues training on windows starting at an adjustment, with the
/// workload forecast passed through the fixed area multiplier.
pub fn fine_tune(gt: &mut GraphicalTransformer, set: &WindowSet, cfg: &TrainConfig) -> Result<PretrainReport> {
    run(gt, set, cfg)
}

/// Objective of `gt` on the given entries with evaluation masks.
pub fn evaluation_loss(gt: &GraphicalTransformer, set: &WindowSet, entries: &[usize], cfg: &TrainConfig) -> Result<f64> {
    Ok(evaluate(gt, set, entries, cfg)?.iter().sum())
}
