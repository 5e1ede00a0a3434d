//! Deterministic synthetic cellular scenarios.
//!
//! Cells sit on a hex lattice. A cell's offset power is
//! `10^(0.1 (tau + o))` with transmit power `tau` and a per-cell scalar CIO
//! `o`; under inverse-square decay the region preferring a cell is its
//! weighted Voronoi region with weight `sqrt(offset power)`. Usage density is
//! a spatial field times a daily/weekly envelope, so each parameter epoch
//! needs one raster assignment. Generation follows the graphical model:
//! parameters drive workload, time drives every cluster, workload and
//! interference drive QoS.

pub mod config;
pub mod response;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frame::{AdjustmentMark, MetricFrame, TimeFeatures, N_METRICS};
use crate::geometry::AdjustmentDelta;
use crate::mwvoronoi::{accumulate_all, assign_regions, LabelRaster, RasterGrid, SitePoint};

pub use config::{AdjustmentSpec, NoiseConfig, ScenarioConfig};
pub use response::{qos_response, QosModel, WorkloadMap};

/// Upper bound on transmit power.
pub const MAX_TX_POWER_DBM: f64 = 49.0;

/// Smallest serving region, in raster cells, a workload is computed over.
pub const MIN_SERVING_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub id: u32,
    pub position: [f64; 2],
    pub tx_power_dbm: f64,
    pub cio_db: f64,
    pub sector_theta_rad: f64,
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tx_power_dbm.is_finite() && self.tx_power_dbm <= MAX_TX_POWER_DBM) {
            return Err(invalid(format!(
                "cell {}: tx power {} dBm exceeds {MAX_TX_POWER_DBM}",
                self.id, self.tx_power_dbm
            )));
        }
        let t = self.sector_theta_rad;
        if !(t > 0.0 && t < std::f64::consts::PI) {
            return Err(invalid(format!("cell {}: theta {t} outside (0, pi)", self.id)));
        }
        Ok(())
    }

    pub fn offset_power_db(&self) -> f64 {
        self.tx_power_dbm + self.cio_db
    }
}

/// Axial hex lattice with neighbor distance `spacing`: index 0 at the
/// origin, then ring by ring counter-clockwise from the +x axis.
pub fn hex_positions(rings: u32, spacing: f64) -> Vec<[f64; 2]> {
    let dirs: [(i32, i32); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];
    let to_xy = |q: i32, r: i32| {
        [
            spacing * (q as f64 + 0.5 * r as f64),
            spacing * (3f64.sqrt() / 2.0) * r as f64,
        ]
    };
    let mut out = vec![[0.0, 0.0]];
    for k in 1..=rings as i32 {
        // Start at k * dirs[0], walk each of the six sides.
        let (mut q, mut r) = (k, 0);
        for side in 0..6 {
            let (dq, dr) = dirs[(side + 2) % 6];
            for _ in 0..k {
                out.push(to_xy(q, r));
                q += dq;
                r += dr;
            }
        }
    }
    out
}

/// Received power at `point`: `10^(0.1 tau) / d^2`.
pub fn rsrp_at(cell: &CellConfig, point: [f64; 2]) -> Result<f64> {
    let d2 = (point[0] - cell.position[0]).powi(2) + (point[1] - cell.position[1]).powi(2);
    if d2 == 0.0 {
        return Err(invalid("point coincides with the cell position"));
    }
    Ok(10f64.powf(0.1 * cell.tx_power_dbm) / d2)
}

/// Hands over from `current` to the neighbor whose offset RSRP beats the
/// serving one by more than `hys_db`; the largest margin wins, then the
/// lowest id.
pub fn select_cell(point: [f64; 2], cells: &[CellConfig], current: u32, hys_db: f64) -> Result<u32> {
    let serving = cells
        .iter()
        .find(|c| c.id == current)
        .ok_or(Error::UnknownCell(current))?;
    let offset = |c: &CellConfig| -> Result<f64> { Ok(rsrp_at(c, point)? * 10f64.powf(0.1 * c.cio_db)) };
    let threshold = offset(serving)? * 10f64.powf(0.1 * hys_db);
    let mut best: Option<(f64, u32)> = None;
    for c in cells.iter().filter(|c| c.id != current) {
        let p = offset(c)?;
        if p > threshold {
            let better = match best {
                None => true,
                Some((bp, bid)) => p > bp || (p == bp && c.id < bid),
            };
            if better {
                best = Some((p, c.id));
            }
        }
    }
    Ok(best.map_or(current, |(_, id)| id))
}

/// Weighted Voronoi sites for the hysteresis-free serving regions. Weights
/// are relative to the strongest cell.
pub fn sites_for(cells: &[CellConfig]) -> Vec<SitePoint> {
    let top = cells
        .iter()
        .map(CellConfig::offset_power_db)
        .fold(f64::NEG_INFINITY, f64::max);
    cells
        .iter()
        .map(|c| SitePoint {
            position: c.position,
            weight: 10f64.powf(0.05 * (c.offset_power_db() - top)),
        })
        .collect()
}

/// Serving regions and noise-free usage mass per cell (envelope = 1) for
/// one parameter set.
#[derive(Debug, Clone)]
pub struct EpochRegions {
    pub labels: LabelRaster,
    pub masses: Vec<f64>,
}

pub fn epoch_regions(cells: &[CellConfig], grid: &RasterGrid, samples: &[f64]) -> Result<EpochRegions> {
    let labels = assign_regions(&sites_for(cells), grid)?;
    let masses = accumulate_all(&labels, grid, samples);
    Ok(EpochRegions { labels, masses })
}

fn check_serving(regions: &EpochRegions, cell: u32, t: usize) -> Result<()> {
    let n = regions.labels.count(cell as usize);
    if n < MIN_SERVING_CELLS {
        return Err(Error::ResolutionExceeded(format!(
            "cell {cell} serves {n} raster cells at t = {t}; need {MIN_SERVING_CELLS}"
        )));
    }
    Ok(())
}

/// Noise-free usage mass of every cell at `t`, before the time envelope.
pub fn region_masses(config: &ScenarioConfig, t: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let grid = config.grid()?;
    let samples = config.density.sample(&grid);
    Ok(epoch_regions(&config.cells_at(t), &grid, &samples)?.masses)
}

/// Per-(seed, cell, t) normal draws for the 17 metrics and uniforms for
/// missingness; independent of the values they perturb.
struct StepDraws {
    normal: [f64; N_METRICS],
    uniform: [f64; N_METRICS],
}

fn step_draws(seed: u64, cell: u32, t: usize) -> StepDraws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | t as u64);
    let mut d = StepDraws {
        normal: [0.0; N_METRICS],
        uniform: [0.0; N_METRICS],
    };
    for z in d.normal.iter_mut() {
        *z = rng.sample(StandardNormal);
    }
    for u in d.uniform.iter_mut() {
        *u = rng.random::<f64>();
    }
    d
}

fn noisy_workload(config: &ScenarioConfig, mass: f64, draws: &StepDraws) -> [f64; 7] {
    let mut w = config.workload.apply(mass);
    if config.noise.enabled {
        for (k, v) in w.iter_mut().enumerate() {
            *v = (*v * (1.0 + config.noise.workload_rel * draws.normal[k])).max(0.0);
        }
        for k in [2, 3, 6] {
            w[k] = w[k].min(100.0);
        }
    }
    w
}

/// One full metric row for a cell at a step from its usage mass.
fn metric_row(config: &ScenarioConfig, mass: f64, tf: &TimeFeatures, draws: &StepDraws) -> [f64; N_METRICS] {
    let w = noisy_workload(config, mass, draws);
    let mut i = config.interference.level(tf);
    if config.noise.enabled {
        i += config.noise.interference_db * draws.normal[7];
    }
    let mut q = qos_response(&config.qos, &w, i, config.interference.floor_dbm, tf);
    if config.noise.enabled {
        for (k, v) in q.iter_mut().enumerate() {
            *v = (*v + config.noise.qos_abs * draws.normal[8 + k]).clamp(0.0, 1.0);
        }
    }
    let mut row = [0.0; N_METRICS];
    row[..7].copy_from_slice(&w);
    row[7] = i;
    row[8..].copy_from_slice(&q);
    row
}

/// Workload metrics of `cell_id` at `t`: the time-modulated density
/// integrated over its hysteresis-free serving region, mapped to the 7
/// metrics, with noise when enabled.
pub fn serving_workload(config: &ScenarioConfig, cell_id: u32, t: usize, grid: &RasterGrid) -> Result<[f64; 7]> {
    config.validate()?;
    if cell_id >= config.n_cells() {
        return Err(Error::UnknownCell(cell_id));
    }
    if t >= config.temporal.horizon {
        return Err(Error::OutOfRange {
            index: t,
            len: config.temporal.horizon,
        });
    }
    let samples = config.density.sample(grid);
    let regions = epoch_regions(&config.cells_at(t), grid, &samples)?;
    check_serving(&regions, cell_id, t)?;
    let ts = timeline(config)[t];
    let tf = TimeFeatures::of(ts);
    let mass = regions.masses[cell_id as usize] * response::envelope(&config.temporal, &tf);
    Ok(noisy_workload(config, mass, &step_draws(config.seed, cell_id, t)))
}

pub fn timeline(config: &ScenarioConfig) -> Vec<DateTime<Utc>> {
    MetricFrame::timeline(config.temporal.start, config.temporal.horizon)
}

/// Generated frames for the exported cells, plus the base cell table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDataset {
    pub cells: Vec<CellConfig>,
    pub frames: Vec<MetricFrame>,
}

impl CellDataset {
    pub fn frame(&self, cell_id: u32) -> Option<&MetricFrame> {
        self.frames.iter().find(|f| f.cell_id == cell_id)
    }

    pub fn cell(&self, cell_id: u32) -> Option<&CellConfig> {
        self.cells.iter().find(|c| c.id == cell_id)
    }
}

/// The full dataset for `config.exported_ids()`.
pub fn synthesize(config: &ScenarioConfig) -> Result<CellDataset> {
    synthesize_cells(config, &config.exported_ids())
}

/// Frames for the listed cells only. Every cell's frame depends on the
/// whole layout, but not on which other cells are generated.
pub fn synthesize_cells(config: &ScenarioConfig, ids: &[u32]) -> Result<CellDataset> {
    config.validate()?;
    let n = config.n_cells();
    if let Some(&bad) = ids.iter().find(|&&id| id >= n) {
        return Err(Error::UnknownCell(bad));
    }
    let grid = config.grid()?;
    let samples = config.density.sample(&grid);
    let starts = config.epoch_starts();
    let epochs: Vec<EpochRegions> = starts
        .iter()
        .map(|&s| epoch_regions(&config.cells_at(s), &grid, &samples))
        .collect::<Result<_>>()?;
    for (&s, e) in starts.iter().zip(&epochs) {
        for &id in ids {
            check_serving(e, id, s)?;
        }
    }
    let stamps = timeline(config);
    let envelopes: Vec<(TimeFeatures, f64)> = stamps
        .iter()
        .map(|&ts| {
            let tf = TimeFeatures::of(ts);
            (tf, response::envelope(&config.temporal, &tf))
        })
        .collect();

    let mut frames = Vec::with_capacity(ids.len());
    for &id in ids {
        let mut frame = MetricFrame::new(id, stamps.clone());
        let mut epoch = 0;
        for (t, (tf, env)) in envelopes.iter().enumerate() {
            while epoch + 1 < starts.len() && starts[epoch + 1] <= t {
                epoch += 1;
            }
            let draws = step_draws(config.seed, id, t);
            let row = metric_row(config, epochs[epoch].masses[id as usize] * env, tf, &draws);
            for (m, v) in row.iter().enumerate() {
                let missing = draws.uniform[m] < config.missing_rate;
                frame.set(t, m, (!missing).then_some(*v));
            }
        }
        frame.adjustments = adjustment_marks(&config.adjustments, id);
        frames.push(frame);
    }
    Ok(CellDataset {
        cells: config.base_cells(),
        frames,
    })
}

/// Adjustment annotations for one cell; same-index entries are summed.
fn adjustment_marks(adjustments: &[AdjustmentSpec], cell: u32) -> Vec<AdjustmentMark> {
    let mut marks: Vec<AdjustmentMark> = Vec::new();
    for a in adjustments.iter().filter(|a| a.cell_id == cell) {
        match marks.iter_mut().find(|m| m.index == a.apply_index) {
            Some(m) => {
                m.delta = AdjustmentDelta {
                    delta_power_db: m.delta.delta_power_db + a.delta_power_db,
                    delta_cio_db: m.delta.delta_cio_db + a.delta_cio_db,
                }
            }
            None => marks.push(AdjustmentMark {
                index: a.apply_index,
                delta: a.delta(),
            }),
        }
    }
    marks.sort_by_key(|m| m.index);
    marks
}
