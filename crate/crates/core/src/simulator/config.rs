//! Scenario configuration: a TOML document with defaults for every field
//! except the layout.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AdjustmentDelta;
use crate::mwvoronoi::{BBox, DensityComponent, DensityField, RasterGrid, MIN_RESOLUTION};

use super::response::{InterferenceModel, QosModel, WorkloadMap};
use super::{hex_positions, CellConfig, MAX_TX_POWER_DBM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    /// Hex rings around the center cell; 2 gives 19 cells.
    pub rings: u32,
    pub spacing_m: f64,
    #[serde(default = "default_power")]
    pub tx_power_dbm: f64,
    #[serde(default)]
    pub cio_db: f64,
    #[serde(default = "default_theta")]
    pub theta_deg: f64,
}

fn default_power() -> f64 {
    43.0
}

fn default_theta() -> f64 {
    crate::geometry::DEFAULT_THETA_DEG
}

/// Per-cell parameter overrides on top of the layout defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellOverride {
    pub id: u32,
    pub tx_power_dbm: Option<f64>,
    pub cio_db: Option<f64>,
    pub theta_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalConfig {
    pub start: DateTime<Utc>,
    /// Number of 15-minute steps.
    pub horizon: usize,
    #[serde(default = "one")]
    pub base: f64,
    #[serde(default = "default_daily_amplitude")]
    pub daily_amplitude: f64,
    #[serde(default = "default_peak_hour")]
    pub peak_hour: f64,
    /// Envelope multiplier on Saturdays and Sundays.
    #[serde(default = "default_weekend")]
    pub weekend_factor: f64,
}

fn one() -> f64 {
    1.0
}

fn default_daily_amplitude() -> f64 {
    0.6
}

fn default_peak_hour() -> f64 {
    20.0
}

fn default_weekend() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Workload std as a fraction of the noise-free value.
    #[serde(default = "default_workload_rel")]
    pub workload_rel: f64,
    #[serde(default = "default_interference_db")]
    pub interference_db: f64,
    #[serde(default = "default_qos_abs")]
    pub qos_abs: f64,
}

fn yes() -> bool {
    true
}

fn default_workload_rel() -> f64 {
    0.03
}

fn default_interference_db() -> f64 {
    0.3
}

fn default_qos_abs() -> f64 {
    0.001
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            workload_rel: default_workload_rel(),
            interference_db: default_interference_db(),
            qos_abs: default_qos_abs(),
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustmentSpec {
    pub cell_id: u32,
    #[serde(default)]
    pub delta_power_db: f64,
    #[serde(default)]
    pub delta_cio_db: f64,
    /// First time index run with the new parameters.
    pub apply_index: usize,
}

impl AdjustmentSpec {
    pub fn delta(&self) -> AdjustmentDelta {
        AdjustmentDelta {
            delta_power_db: self.delta_power_db,
            delta_cio_db: self.delta_cio_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hys_db: f64,
    #[serde(default = "default_missing_rate")]
    pub missing_rate: f64,
    /// Raster cells per axis for serving regions.
    #[serde(default = "default_resolution")]
    pub raster_resolution: usize,
    pub layout: LayoutConfig,
    #[serde(default)]
    pub cells: Vec<CellOverride>,
    #[serde(default)]
    pub density: DensityField,
    pub temporal: TemporalConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub workload: WorkloadMap,
    #[serde(default)]
    pub interference: InterferenceModel,
    #[serde(default)]
    pub qos: QosModel,
    #[serde(default)]
    pub adjustments: Vec<AdjustmentSpec>,
    /// Cells written to the dataset; empty means all.
    #[serde(default)]
    pub export_cells: Vec<u32>,
}

fn default_missing_rate() -> f64 {
    0.01
}

fn default_resolution() -> usize {
    512
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Homogeneous 2-ring hex layout, uniform density, noise on, four weeks.
    pub fn homogeneous() -> Self {
        Self {
            seed: 7,
            hys_db: 0.0,
            missing_rate: default_missing_rate(),
            raster_resolution: default_resolution(),
            layout: LayoutConfig {
                rings: 2,
                spacing_m: 500.0,
                tx_power_dbm: default_power(),
                cio_db: 0.0,
                theta_deg: default_theta(),
            },
            cells: Vec::new(),
            density: DensityField {
                components: vec![DensityComponent::Uniform { amplitude: 1e-3 }],
            },
            temporal: TemporalConfig {
                start: "2022-08-01T00:00:00Z".parse().unwrap(),
                horizon: 4 * crate::frame::STEPS_PER_WEEK,
                base: 1.0,
                daily_amplitude: default_daily_amplitude(),
                peak_hour: default_peak_hour(),
                weekend_factor: default_weekend(),
            },
            noise: NoiseConfig::default(),
            workload: WorkloadMap::default(),
            interference: InterferenceModel::default(),
            qos: QosModel::default(),
            adjustments: Vec::new(),
            export_cells: Vec::new(),
        }
    }

    /// The fixed forecasting sanity scenario: homogeneous, lightly noisy,
    /// exporting the center cell and its first ring.
    pub fn sanity() -> Self {
        Self {
            noise: NoiseConfig {
                enabled: true,
                workload_rel: 0.02,
                interference_db: 0.2,
                qos_abs: 0.0005,
            },
            export_cells: (0..7).collect(),
            ..Self::homogeneous()
        }
    }

    /// Every field problem, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let finite = |v: f64| v.is_finite();
        if !(finite(self.hys_db) && self.hys_db >= 0.0) {
            p.push(format!("hys_db: must be finite and >= 0, got {}", self.hys_db));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            p.push(format!("missing_rate: must be in [0, 1), got {}", self.missing_rate));
        }
        if self.raster_resolution < MIN_RESOLUTION {
            p.push(format!(
                "raster_resolution: must be >= {MIN_RESOLUTION}, got {}",
                self.raster_resolution
            ));
        }
        let l = &self.layout;
        if l.rings > 8 {
            p.push(format!("layout.rings: at most 8 supported, got {}", l.rings));
        }
        if !(finite(l.spacing_m) && l.spacing_m > 0.0) {
            p.push(format!("layout.spacing_m: must be > 0, got {}", l.spacing_m));
        }
        check_power(&mut p, "layout.tx_power_dbm", l.tx_power_dbm);
        if !finite(l.cio_db) {
            p.push("layout.cio_db: must be finite".into());
        }
        check_theta(&mut p, "layout.theta_deg", l.theta_deg);
        let n_cells = hex_count(l.rings);
        for (k, c) in self.cells.iter().enumerate() {
            if c.id >= n_cells {
                p.push(format!("cells[{k}].id: no cell {} in a {n_cells}-cell layout", c.id));
            }
            if let Some(v) = c.tx_power_dbm {
                check_power(&mut p, &format!("cells[{k}].tx_power_dbm"), v);
            }
            if let Some(v) = c.cio_db {
                if !finite(v) {
                    p.push(format!("cells[{k}].cio_db: must be finite"));
                }
            }
            if let Some(v) = c.theta_deg {
                check_theta(&mut p, &format!("cells[{k}].theta_deg"), v);
            }
        }
        if let Err(e) = self.density.validate() {
            p.push(format!("density: {e}"));
        }
        let t = &self.temporal;
        if t.horizon < 2 * crate::frame::STEPS_PER_DAY {
            p.push(format!(
                "temporal.horizon: must cover at least one input+output window ({}), got {}",
                2 * crate::frame::STEPS_PER_DAY,
                t.horizon
            ));
        }
        if !(finite(t.base) && t.base > 0.0) {
            p.push(format!("temporal.base: must be > 0, got {}", t.base));
        }
        if !(finite(t.daily_amplitude) && (0.0..1.0).contains(&t.daily_amplitude)) {
            p.push(format!("temporal.daily_amplitude: must be in [0, 1), got {}", t.daily_amplitude));
        }
        if !(finite(t.peak_hour) && (0.0..24.0).contains(&t.peak_hour)) {
            p.push(format!("temporal.peak_hour: must be in [0, 24), got {}", t.peak_hour));
        }
        if !(finite(t.weekend_factor) && t.weekend_factor > 0.0) {
            p.push(format!("temporal.weekend_factor: must be > 0, got {}", t.weekend_factor));
        }
        let n = &self.noise;
        for (name, v) in [
            ("noise.workload_rel", n.workload_rel),
            ("noise.interference_db", n.interference_db),
            ("noise.qos_abs", n.qos_abs),
        ] {
            if !(finite(v) && v >= 0.0) {
                p.push(format!("{name}: must be finite and >= 0, got {v}"));
            }
        }
        p.extend(self.workload.problems());
        p.extend(self.interference.problems());
        p.extend(self.qos.problems());
        let mut cumulative = vec![0.0; n_cells as usize];
        for (k, a) in self.adjustments.iter().enumerate() {
            if a.cell_id >= n_cells {
                p.push(format!("adjustments[{k}].cell_id: no cell {}", a.cell_id));
                continue;
            }
            if a.apply_index == 0 || a.apply_index >= t.horizon {
                p.push(format!(
                    "adjustments[{k}].apply_index: must be in 1..{}, got {}",
                    t.horizon, a.apply_index
                ));
            }
            if let Err(e) = a.delta().validate() {
                p.push(format!("adjustments[{k}]: {e}"));
            }
            cumulative[a.cell_id as usize] += a.delta_power_db;
        }
        if p.is_empty() {
            for (id, extra) in cumulative.iter().enumerate() {
                let base = self.base_cell(id as u32).tx_power_dbm;
                if base + extra > MAX_TX_POWER_DBM {
                    p.push(format!(
                        "adjustments: cell {id} would transmit {} dBm, above {MAX_TX_POWER_DBM}",
                        base + extra
                    ));
                }
            }
        }
        for (k, id) in self.export_cells.iter().enumerate() {
            if *id >= n_cells {
                p.push(format!("export_cells[{k}]: no cell {id}"));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(p))
        }
    }

    pub fn n_cells(&self) -> u32 {
        hex_count(self.layout.rings)
    }

    fn base_cell(&self, id: u32) -> CellConfig {
        let l = &self.layout;
        let pos = hex_positions(l.rings, l.spacing_m)[id as usize];
        let mut cell = CellConfig {
            id,
            position: pos,
            tx_power_dbm: l.tx_power_dbm,
            cio_db: l.cio_db,
            sector_theta_rad: l.theta_deg.to_radians(),
        };
        if let Some(o) = self.cells.iter().rev().find(|o| o.id == id) {
            if let Some(v) = o.tx_power_dbm {
                cell.tx_power_dbm = v;
            }
            if let Some(v) = o.cio_db {
                cell.cio_db = v;
            }
            if let Some(v) = o.theta_deg {
                cell.sector_theta_rad = v.to_radians();
            }
        }
        cell
    }

    /// Configured sector angle of `id` in degrees, as written in the config.
    pub fn theta_deg(&self, id: u32) -> Option<f64> {
        if id >= self.n_cells() {
            return None;
        }
        let o = self.cells.iter().rev().find(|o| o.id == id);
        Some(o.and_then(|o| o.theta_deg).unwrap_or(self.layout.theta_deg))
    }

    /// Cell parameters before any adjustment.
    pub fn base_cells(&self) -> Vec<CellConfig> {
        (0..self.n_cells()).map(|id| self.base_cell(id)).collect()
    }

    /// Cell parameters in force at time index `t`.
    pub fn cells_at(&self, t: usize) -> Vec<CellConfig> {
        let mut cells = self.base_cells();
        for a in self.adjustments.iter().filter(|a| a.apply_index <= t) {
            let c = &mut cells[a.cell_id as usize];
            c.tx_power_dbm += a.delta_power_db;
            c.cio_db += a.delta_cio_db;
        }
        cells
    }

    /// Indices where the parameters change, including 0.
    pub fn epoch_starts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = std::iter::once(0)
            .chain(self.adjustments.iter().map(|a| a.apply_index))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Square raster covering the layout with one ring of margin.
    pub fn grid(&self) -> Result<RasterGrid> {
        let half = (self.layout.rings as f64 + 1.0) * self.layout.spacing_m;
        RasterGrid::square(BBox::centered(half), self.raster_resolution)
    }

    pub fn exported_ids(&self) -> Vec<u32> {
        if self.export_cells.is_empty() {
            (0..self.n_cells()).collect()
        } else {
            self.export_cells.clone()
        }
    }
}

fn hex_count(rings: u32) -> u32 {
    1 + 3 * rings * (rings + 1)
}

fn check_power(p: &mut Vec<String>, name: &str, v: f64) {
    if !(v.is_finite() && v <= MAX_TX_POWER_DBM) {
        p.push(format!("{name}: must be finite and <= {MAX_TX_POWER_DBM} dBm, got {v}"));
    }
}

fn check_theta(p: &mut Vec<String>, name: &str, v: f64) {
    if !(v.is_finite() && v > 0.0 && v < 180.0) {
        p.push(format!("{name}: must be in (0, 180) degrees, got {v}"));
    }
}
