//! Per-cluster encoder-decoder attention model.
//!
//! The encoder reads the look-back of the cluster's own metrics joined with
//! its parent series. The decoder reads the latter half of the look-back
//! followed by the look-back mean as an initial guess for the horizon,
//! attends to the encoder output, and the shared projection maps hidden
//! states back to metric space. Layers are post-norm with full attention.

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use celladj_core::frame::Cluster;

use crate::error::{invalid, Result};
use crate::graph::{GraphicalModel, Node};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::window::{WindowSample, DEFAULT_INPUT_LEN, DEFAULT_OUTPUT_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub mask_ratio: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            d_ff: 64,
            input_len: DEFAULT_INPUT_LEN,
            output_len: DEFAULT_OUTPUT_LEN,
            mask_ratio: 0.7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(invalid("d_model must be even for the positional encoding"));
        }
        if self.d_ff == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(invalid("d_ff and layer counts must be positive"));
        }
        if self.input_len < 2 || !self.input_len.is_multiple_of(2) || self.output_len == 0 {
            return Err(invalid(format!(
                "input_len must be even and >= 2, output_len positive; got {} and {}",
                self.input_len, self.output_len
            )));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(invalid(format!("mask_ratio must lie in [0, 1), got {}", self.mask_ratio)));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.input_len / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EncoderLayer {
    attn: Attention,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DecoderLayer {
    self_attn: Attention,
    norm1: Norm,
    cross: Attention,
    norm2: Norm,
    ff: FeedForward,
    norm3: Norm,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    enc_embed: Linear,
    dec_embed: Linear,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    projection: Linear,
}

struct Builder<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, rows: usize, cols: usize) -> Linear {
        let w = ParamSet::xavier(&mut self.rng, rows, cols);
        Linear {
            w: self.params.push(format!("{name}.w"), w),
            b: self.params.push(format!("{name}.b"), Array2::zeros((1, cols))),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.params.push(format!("{name}.g"), Array2::ones((1, d))),
            b: self.params.push(format!("{name}.b"), Array2::zeros((1, d))),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, f: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, f),
            down: self.linear(&format!("{name}.down"), f, d),
        }
    }
}

/// Sinusoidal positional encoding for positions `0..len`.
pub fn positional_encoding(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, j)| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Weights and constant denominators of the three training losses for
/// one sample. Denominators are batch totals so per-sample terms add up
/// to the batch loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScale {
    pub forecast: f64,
    pub reconstruction: f64,
    pub alignment: f64,
}

/// Loss components of one sample before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub forecast_sse: f64,
    pub reconstruction_sse: f64,
    pub alignment_sse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub cluster: Cluster,
    pub config: ModelConfig,
    pub parents: Vec<Node>,
    pub n_metrics: usize,
    pub parent_width: usize,
    pub params: ParamSet,
    layout: Layout,
    enc_pos: Array2<f64>,
    dec_pos: Array2<f64>,
}

impl ClusterModel {
    pub fn new(graph: &GraphicalModel, cluster: Cluster, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let parents = graph.series_parents(cluster);
        graph.check_inputs(cluster, &parents)?;
        let n_metrics = cluster.columns().len();
        let parent_width = parents.iter().map(|n| n.width()).sum();
        let mut params = ParamSet::default();
        let mut b = Builder {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (d, f, input) = (config.d_model, config.d_ff, n_metrics + parent_width);
        let enc_embed = b.linear("enc_embed", input, d);
        let dec_embed = b.linear("dec_embed", input, d);
        let encoder = (0..config.encoder_layers)
            .map(|l| EncoderLayer {
                attn: b.attention(&format!("enc{l}.attn"), d),
                norm1: b.norm(&format!("enc{l}.norm1"), d),
                ff: b.ff(&format!("enc{l}.ff"), d, f),
                norm2: b.norm(&format!("enc{l}.norm2"), d),
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|l| DecoderLayer {
                self_attn: b.attention(&format!("dec{l}.self"), d),
                norm1: b.norm(&format!("dec{l}.norm1"), d),
                cross: b.attention(&format!("dec{l}.cross"), d),
                norm2: b.norm(&format!("dec{l}.norm2"), d),
                ff: b.ff(&format!("dec{l}.ff"), d, f),
                norm3: b.norm(&format!("dec{l}.norm3"), d),
            })
            .collect();
        let projection = b.linear("projection", d, n_metrics);
        let pos = positional_encoding(config.input_len + config.output_len, d);
        Ok(Self {
            cluster,
            parents,
            n_metrics,
            parent_width,
            params,
            layout: Layout {
                enc_embed,
                dec_embed,
                encoder,
                decoder,
                projection,
            },
            enc_pos: pos.slice(s![..config.input_len, ..]).to_owned(),
            dec_pos: pos.slice(s![config.half().., ..]).to_owned(),
            config,
        })
    }

    /// Rebuilds a model from stored parameters; names and shapes must
    /// match the layout implied by `config`.
    pub fn from_params(graph: &GraphicalModel, cluster: Cluster, config: ModelConfig, params: ParamSet) -> Result<Self> {
        let mut m = Self::new(graph, cluster, config, 0)?;
        if params.len() != m.params.len() {
            return Err(crate::Error::Format(format!(
                "{cluster:?}: {} parameter tensors stored, layout has {}",
                params.len(),
                m.params.len()
            )));
        }
        for ((n0, t0), (n1, t1)) in m.params.iter().zip(params.iter()) {
            if n0 != n1 || t0.dim() != t1.dim() {
                return Err(crate::Error::Format(format!(
                    "{cluster:?}: stored tensor {n1} {:?} does not match layout {n0} {:?}",
                    t1.dim(),
                    t0.dim()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    /// Indices of the projection weight and bias.
    pub fn projection_params(&self) -> (usize, usize) {
        (self.layout.projection.w, self.layout.projection.b)
    }

    /// Indices of the encoder and decoder embedding weights.
    pub fn embedding_params(&self) -> (usize, usize) {
        (self.layout.enc_embed.w, self.layout.dec_embed.w)
    }

    /// Number of masked look-back entries per sample at `ratio`.
    pub fn masked_count(&self, ratio: f64) -> usize {
        masked_count(ratio, self.config.input_len * self.n_metrics)
    }

    pub fn check_sample(&self, sample: &WindowSample) -> Result<()> {
        let (i, o, d, p) = (self.config.input_len, self.config.output_len, self.n_metrics, self.parent_width);
        if sample.cluster != self.cluster {
            return Err(invalid(format!("window is for {:?}, model is {:?}", sample.cluster, self.cluster)));
        }
        if sample.parents != self.parents {
            return Err(invalid(format!(
                "window parents {:?} differ from the model's {:?}",
                sample.parents, self.parents
            )));
        }
        let ok = sample.x_src.dim() == (i, d)
            && sample.mask_src.dim() == (i, d)
            && sample.pa_src.dim() == (i, p)
            && sample.pa_tgt.dim() == (o, p)
            && sample.y.dim() == (o, d)
            && sample.mask_y.dim() == (o, d);
        if !ok {
            return Err(invalid(format!(
                "{:?} window shapes do not match I={i} O={o} d={d} p={p} (parent targets must cover the full horizon)",
                self.cluster
            )));
        }
        Ok(())
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Linear) -> Var {
        let w = tape.param(l.w);
        let b = tape.param(l.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: Norm) -> Var {
        let g = tape.param(n.g);
        let b = tape.param(n.b);
        let z = tape.layer_norm(x);
        let z = tape.mul_row(z, g);
        tape.add_row(z, b)
    }

    fn attention(&self, tape: &mut Tape, query: Var, memory: Var, a: Attention) -> Var {
        let q = self.linear(tape, query, a.q);
        let k = self.linear(tape, memory, a.k);
        let v = self.linear(tape, memory, a.v);
        let dh = self.config.d_model / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.config.heads)
            .map(|h| {
                let (c0, c1) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, c0, c1);
                let kh = tape.slice_cols(k, c0, c1);
                let vh = tape.slice_cols(v, c0, c1);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, scale);
                let weights = tape.softmax_rows(scores);
                tape.matmul(weights, vh)
            })
            .collect();
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        self.linear(tape, joined, a.o)
    }

    fn feed_forward(&self, tape: &mut Tape, x: Var, f: FeedForward) -> Var {
        let h = self.linear(tape, x, f.up);
        let h = tape.gelu(h);
        self.linear(tape, h, f.down)
    }

    fn embed(&self, tape: &mut Tape, input: Array2<f64>, l: Linear, pos: &Array2<f64>) -> Var {
        let x = tape.constant(input);
        let e = self.linear(tape, x, l);
        let p = tape.constant(pos.clone());
        tape.add(e, p)
    }

    /// Encoder hidden states (`I x D`) for own metrics `x` and parents.
    fn encode(&self, tape: &mut Tape, x: &Array2<f64>, pa: &Array2<f64>) -> Var {
        let input = ndarray::concatenate![ndarray::Axis(1), x.view(), pa.view()];
        let mut h = self.embed(tape, input, self.layout.enc_embed, &self.enc_pos);
        for layer in &self.layout.encoder {
            let a = self.attention(tape, h, h, layer.attn);
            let r = tape.add(h, a);
            h = self.norm(tape, r, layer.norm1);
            let f = self.feed_forward(tape, h, layer.ff);
            let r = tape.add(h, f);
            h = self.norm(tape, r, layer.norm2);
        }
        h
    }

    /// Decoder input: latter half of the look-back, then the look-back
    /// mean repeated over the horizon, joined with parents over the span.
    pub fn decoder_input(&self, sample: &WindowSample) -> Array2<f64> {
        let (half, o) = (self.config.half(), self.config.output_len);
        let mean = sample.observed_mean();
        let mut input = Array2::zeros((half + o, self.n_metrics + self.parent_width));
        input
            .slice_mut(s![..half, ..self.n_metrics])
            .assign(&observed_input(sample).slice(s![half.., ..]));
        for r in half..half + o {
            for (m, v) in mean.iter().enumerate() {
                input[[r, m]] = *v;
            }
        }
        input
            .slice_mut(s![..half, self.n_metrics..])
            .assign(&sample.pa_src.slice(s![half.., ..]));
        input.slice_mut(s![half.., self.n_metrics..]).assign(&sample.pa_tgt);
        input
    }

    fn decode(&self, tape: &mut Tape, input: Array2<f64>, memory: Var) -> Var {
        let mut h = self.embed(tape, input, self.layout.dec_embed, &self.dec_pos);
        for layer in &self.layout.decoder {
            let a = self.attention(tape, h, h, layer.self_attn);
            let r = tape.add(h, a);
            h = self.norm(tape, r, layer.norm1);
            let c = self.attention(tape, h, memory, layer.cross);
            let r = tape.add(h, c);
            h = self.norm(tape, r, layer.norm2);
            let f = self.feed_forward(tape, h, layer.ff);
            let r = tape.add(h, f);
            h = self.norm(tape, r, layer.norm3);
        }
        h
    }

    fn project(&self, tape: &mut Tape, h: Var) -> Var {
        self.linear(tape, h, self.layout.projection)
    }

    /// Forecast graph; returns (decoder hidden, forecast `O x d`).
    fn forecast_graph(&self, tape: &mut Tape, sample: &WindowSample, memory: Var) -> (Var, Var) {
        let half = self.config.half();
        let dec = self.decode(tape, self.decoder_input(sample), memory);
        let horizon = tape.slice_rows(dec, half, half + self.config.output_len);
        (dec, self.project(tape, horizon))
    }

    /// Adjustment-free forecast over `[t, t + O - 1]` in scaled space.
    pub fn forecast(&self, sample: &WindowSample) -> Result<Array2<f64>> {
        self.check_sample(sample)?;
        let mut tape = Tape::new(&self.params);
        let memory = self.encode(&mut tape, &observed_input(sample), &sample.pa_src);
        let (_, y) = self.forecast_graph(&mut tape, sample, memory);
        Ok(tape.value(y).clone())
    }

    /// Reconstruction of the latter half of the look-back from an encoder
    /// pass with `mask` (1 = hidden) applied to own metrics.
    pub fn reconstruct(&self, sample: &WindowSample, mask: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_sample(sample)?;
        let mut tape = Tape::new(&self.params);
        let hidden = self.masked_input(sample, mask);
        let enc = self.encode(&mut tape, &hidden, &sample.pa_src);
        let half = self.config.half();
        let tail = tape.slice_rows(enc, half, self.config.input_len);
        let r = self.project(&mut tape, tail);
        Ok(tape.value(r).clone())
    }

    fn masked_input(&self, sample: &WindowSample, mask: &Array2<f64>) -> Array2<f64> {
        observed_input(sample) * &mask.mapv(|m| 1.0 - m)
    }

    /// Builds the weighted training objective for one sample on `tape`.
    /// `recon_mask` marks hidden look-back entries; `multiplier` scales the
    /// forecast output before the forecast loss.
    pub fn objective(
        &self,
        tape: &mut Tape,
        sample: &WindowSample,
        recon_mask: &Array2<f64>,
        multiplier: f64,
        weights: &LossScale,
    ) -> (Var, LossParts) {
        let (half, i) = (self.config.half(), self.config.input_len);
        let memory = self.encode(tape, &observed_input(sample), &sample.pa_src);
        let (dec, y) = self.forecast_graph(tape, sample, memory);
        let y = if multiplier == 1.0 { y } else { tape.scale(y, multiplier) };
        let f = tape.masked_sse(y, sample.y.clone(), sample.mask_y.clone());

        let any_masked = recon_mask.iter().any(|&m| m != 0.0);
        let masked_memory = if any_masked {
            self.encode(tape, &self.masked_input(sample, recon_mask), &sample.pa_src)
        } else {
            memory
        };
        let enc_tail = tape.slice_rows(masked_memory, half, i);
        let rec_mask = &recon_mask.slice(s![half.., ..]) * &sample.mask_src.slice(s![half.., ..]);
        let rec = self.project(tape, enc_tail);
        let r = tape.masked_sse(rec, sample.x_src.slice(s![half.., ..]).to_owned(), rec_mask);

        let dec_head = tape.slice_rows(dec, 0, half);
        let diff = tape.sub(enc_tail, dec_head);
        let a = tape.sum_sq(diff);

        let parts = LossParts {
            forecast_sse: tape.scalar(f),
            reconstruction_sse: tape.scalar(r),
            alignment_sse: tape.scalar(a),
        };
        let f = tape.scale(f, weights.forecast);
        let r = tape.scale(r, weights.reconstruction);
        let a = tape.scale(a, weights.alignment);
        let fr = tape.add(f, r);
        (tape.add(fr, a), parts)
    }

    /// Width of the alignment target per sample (`I/2 x D`).
    pub fn alignment_size(&self) -> usize {
        self.config.half() * self.config.d_model
    }
}

/// Own metrics with unobserved entries forced to 0, so values stored at
/// missing points never reach the model.
fn observed_input(sample: &WindowSample) -> Array2<f64> {
    &sample.x_src * &sample.mask_src
}

/// `ceil(ratio * n)`, robust to representation error in `ratio * n`.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).min(n)
}

/// Seeded choice of exactly `masked_count(ratio, rows * cols)` entries.
pub fn sample_mask(rows: usize, cols: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = rows * cols;
    let k = masked_count(ratio, n);
    let mut m = Array2::zeros((rows, cols));
    for idx in rand::seq::index::sample(rng, n, k) {
        m[[idx / cols, idx % cols]] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_counts() {
        assert_eq!(masked_count(0.7, 100), 70);
        assert_eq!(masked_count(0.7, 672), 471);
        assert_eq!(masked_count(0.0, 672), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_mask(96, 7, 0.7, &mut rng).sum(), 471.0);
    }

    #[test]
    fn positional_encoding_values() {
        let p = positional_encoding(3, 4);
        assert_eq!(p[[0, 0]], 0.0);
        assert_eq!(p[[0, 1]], 1.0);
        assert!((p[[2, 2]] - (2.0f64 / 100.0).sin()).abs() < 1e-15);
    }
}
