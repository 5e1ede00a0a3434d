//! Multiplicatively weighted Voronoi regions on a raster.
//!
//! Site `i` owns every point minimizing `||x - c_i|| / phi_i`. Regions are
//! labelled on a uniform grid of cell centers; accumulators integrate a
//! density over a region by the midpoint rule. On top of these sit the two
//! density-reconstruction procedures: the shrinking-weight limit at a site
//! and the difference-in-difference estimate at a three-region vertex.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SitePoint {
    pub position: [f64; 2],
    pub weight: f64,
}

impl SitePoint {
    pub fn new(position: [f64; 2], weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(invalid(format!("site weight must be positive, got {weight}")));
        }
        Ok(Self { position, weight })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn centered(half_width: f64) -> Self {
        Self::new([-half_width, -half_width], [half_width, half_width])
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    pub bbox: BBox,
    pub nx: usize,
    pub ny: usize,
}

impl RasterGrid {
    pub fn new(bbox: BBox, nx: usize, ny: usize) -> Result<Self> {
        let w = bbox.max[0] - bbox.min[0];
        let h = bbox.max[1] - bbox.min[1];
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(invalid("raster bbox is degenerate"));
        }
        if nx < MIN_RESOLUTION || ny < MIN_RESOLUTION {
            return Err(invalid(format!(
                "raster resolution must be at least {MIN_RESOLUTION} per axis, got {nx}x{ny}"
            )));
        }
        Ok(Self { bbox, nx, ny })
    }

    pub fn square(bbox: BBox, n: usize) -> Result<Self> {
        Self::new(bbox, n, n)
    }

    pub fn cell_width(&self) -> f64 {
        (self.bbox.max[0] - self.bbox.min[0]) / self.nx as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.bbox.max[1] - self.bbox.min[1]) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.bbox.min[0] + (ix as f64 + 0.5) * self.cell_width(),
            self.bbox.min[1] + (iy as f64 + 0.5) * self.cell_height(),
        ]
    }

    /// Corner shared by cells `(ix, iy)` and `(ix + 1, iy + 1)`.
    pub fn corner(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.bbox.min[0] + (ix + 1) as f64 * self.cell_width(),
            self.bbox.min[1] + (iy + 1) as f64 * self.cell_height(),
        ]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One site index per raster cell, row-major with `y` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub nx: usize,
    pub ny: usize,
    pub n_sites: usize,
    labels: Vec<u32>,
}

impl LabelRaster {
    pub fn label(&self, ix: usize, iy: usize) -> u32 {
        self.labels[iy * self.nx + ix]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self, site: usize) -> usize {
        self.labels.iter().filter(|&&l| l as usize == site).count()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_sites];
        for &l in &self.labels {
            out[l as usize] += 1;
        }
        out
    }
}

/// A usage density component. Gaussian `amplitude` is the blob's total mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityComponent {
    Uniform {
        amplitude: f64,
    },
    Gaussian {
        center: [f64; 2],
        sigma: f64,
        amplitude: f64,
    },
    /// `max(0, a x + b y + c)`.
    Linear {
        gradient: [f64; 2],
        offset: f64,
    },
}

impl DensityComponent {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match *self {
            DensityComponent::Uniform { amplitude } => amplitude,
            DensityComponent::Gaussian {
                center,
                sigma,
                amplitude,
            } => {
                let r2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                amplitude / (2.0 * PI * sigma * sigma) * (-r2 / (2.0 * sigma * sigma)).exp()
            }
            DensityComponent::Linear { gradient, offset } => {
                (gradient[0] * p[0] + gradient[1] * p[1] + offset).max(0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DensityComponent::Uniform { amplitude } => amplitude.is_finite() && amplitude >= 0.0,
            DensityComponent::Gaussian {
                center,
                sigma,
                amplitude,
            } => {
                center.iter().all(|v| v.is_finite())
                    && sigma.is_finite()
                    && sigma > 0.0
                    && amplitude.is_finite()
                    && amplitude >= 0.0
            }
            DensityComponent::Linear { gradient, offset } => {
                gradient.iter().all(|v| v.is_finite()) && offset.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid density component {self:?}")))
        }
    }
}

/// Usage density as a sum of non-negative components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DensityField {
    pub components: Vec<DensityComponent>,
}

impl DensityField {
    pub fn new(components: Vec<DensityComponent>) -> Result<Self> {
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    pub fn uniform(amplitude: f64) -> Self {
        Self {
            components: vec![DensityComponent::Uniform { amplitude }],
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.components.iter().try_for_each(|c| c.validate())
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.components.iter().map(|c| c.eval(p)).sum()
    }

    /// Midpoint-rule density at every cell center, row-major.
    pub fn sample(&self, grid: &RasterGrid) -> Vec<f64> {
        (0..grid.ny)
            .flat_map(|iy| (0..grid.nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| self.eval(grid.center(ix, iy)))
            .collect()
    }
}

/// Labels each cell with `argmin_i ||x - c_i|| / phi_i`, lowest index on ties.
pub fn assign_regions(sites: &[SitePoint], grid: &RasterGrid) -> Result<LabelRaster> {
    if sites.is_empty() {
        return Err(invalid("site list is empty"));
    }
    if let Some(s) = sites.iter().find(|s| !(s.weight.is_finite() && s.weight > 0.0)) {
        return Err(invalid(format!("site weight must be positive, got {}", s.weight)));
    }
    // Compare squared weighted distances; exact under power-of-two weight scaling.
    let inv_w2: Vec<f64> = sites.iter().map(|s| 1.0 / (s.weight * s.weight)).collect();
    let mut labels = vec![0u32; grid.len()];
    labels
        .par_chunks_mut(grid.nx)
        .enumerate()
        .for_each(|(iy, row)| {
            for (ix, out) in row.iter_mut().enumerate() {
                let p = grid.center(ix, iy);
                let mut best = f64::INFINITY;
                let mut arg = 0u32;
                for (i, s) in sites.iter().enumerate() {
                    let d2 = (p[0] - s.position[0]).powi(2) + (p[1] - s.position[1]).powi(2);
                    let score = d2 * inv_w2[i];
                    if score < best {
                        best = score;
                        arg = i as u32;
                    }
                }
                *out = arg;
            }
        });
    Ok(LabelRaster {
        nx: grid.nx,
        ny: grid.ny,
        n_sites: sites.len(),
        labels,
    })
}

fn check_index(labels: &LabelRaster, i: usize) -> Result<()> {
    if i >= labels.n_sites {
        return Err(Error::OutOfRange {
            index: i,
            len: labels.n_sites,
        });
    }
    Ok(())
}

pub fn region_area(labels: &LabelRaster, grid: &RasterGrid, i: usize) -> Result<f64> {
    check_index(labels, i)?;
    Ok(labels.count(i) as f64 * grid.cell_area())
}

/// `f_i`: the density integrated over region `i`.
pub fn region_accumulate(
    labels: &LabelRaster,
    grid: &RasterGrid,
    density: &DensityField,
    i: usize,
) -> Result<f64> {
    check_index(labels, i)?;
    let samples = density.sample(grid);
    Ok(accumulate_sampled(labels, grid, &samples, i))
}

/// Accumulators for every region from pre-sampled densities.
pub fn accumulate_all(labels: &LabelRaster, grid: &RasterGrid, samples: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; labels.n_sites];
    for (&l, &rho) in labels.labels.iter().zip(samples) {
        out[l as usize] += rho;
    }
    out.iter_mut().for_each(|v| *v *= grid.cell_area());
    out
}

fn accumulate_sampled(labels: &LabelRaster, grid: &RasterGrid, samples: &[f64], i: usize) -> f64 {
    let sum: f64 = labels
        .labels
        .iter()
        .zip(samples)
        .filter(|(&l, _)| l as usize == i)
        .map(|(_, &rho)| rho)
        .sum();
    sum * grid.cell_area()
}

/// Smallest region, in cells, the reconstruction procedures accept (4x4).
pub const MIN_REGION_CELLS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitStep {
    pub phi: f64,
    pub area: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub estimate: f64,
    pub trace: Vec<LimitStep>,
}

/// Density at site `i` as `f_i / ||S_i||` while shrinking `phi_i` along
/// `phi_sequence`.
pub fn site_density_limit(
    sites: &[SitePoint],
    grid: &RasterGrid,
    density: &DensityField,
    i: usize,
    phi_sequence: &[f64],
) -> Result<LimitEstimate> {
    if i >= sites.len() {
        return Err(Error::OutOfRange {
            index: i,
            len: sites.len(),
        });
    }
    if phi_sequence.is_empty() {
        return Err(invalid("phi sequence is empty"));
    }
    if phi_sequence.iter().any(|p| !(p.is_finite() && *p > 0.0))
        || phi_sequence.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(invalid("phi sequence must be positive and strictly decreasing"));
    }
    let samples = density.sample(grid);
    let mut work = sites.to_vec();
    let mut trace = Vec::with_capacity(phi_sequence.len());
    for &phi in phi_sequence {
        work[i].weight = phi;
        let labels = assign_regions(&work, grid)?;
        let cells = labels.count(i);
        if cells < MIN_REGION_CELLS {
            return Err(Error::ResolutionExceeded(format!(
                "region {i} spans {cells} cells at phi = {phi}; need {MIN_REGION_CELLS}"
            )));
        }
        let area = cells as f64 * grid.cell_area();
        let mass = accumulate_sampled(&labels, grid, &samples, i);
        trace.push(LimitStep {
            phi,
            area,
            estimate: mass / area,
        });
    }
    Ok(LimitEstimate {
        estimate: trace.last().unwrap().estimate,
        trace,
    })
}

/// Where regions `i`, `j`, `k` meet on the raster: the shared corner of the
/// first 2x2 block (row-major) containing all three labels.
pub fn locate_vertex(
    labels: &LabelRaster,
    grid: &RasterGrid,
    i: usize,
    j: usize,
    k: usize,
) -> Option<[f64; 2]> {
    let want = [i as u32, j as u32, k as u32];
    for iy in 0..labels.ny - 1 {
        for ix in 0..labels.nx - 1 {
            let block = [
                labels.label(ix, iy),
                labels.label(ix + 1, iy),
                labels.label(ix, iy + 1),
                labels.label(ix + 1, iy + 1),
            ];
            if want.iter().all(|w| block.contains(w)) {
                return Some(grid.corner(ix, iy));
            }
        }
    }
    None
}

/// Weights for sites `i` and `k` that place `target` on the vertex of
/// regions `i`, `j`, `k`, keeping `phi_j` fixed.
pub fn weights_for_vertex(
    sites: &[SitePoint],
    i: usize,
    j: usize,
    k: usize,
    target: [f64; 2],
) -> Result<Vec<SitePoint>> {
    for idx in [i, j, k] {
        if idx >= sites.len() {
            return Err(Error::OutOfRange {
                index: idx,
                len: sites.len(),
            });
        }
    }
    let dist = |s: &SitePoint| (target[0] - s.position[0]).hypot(target[1] - s.position[1]);
    let dj = dist(&sites[j]);
    if dj == 0.0 {
        return Err(invalid("target coincides with site j"));
    }
    let mut out = sites.to_vec();
    let phi_j = sites[j].weight;
    out[i].weight = phi_j * dist(&sites[i]) / dj;
    out[k].weight = phi_j * dist(&sites[k]) / dj;
    for s in [&out[i], &out[k]] {
        if !(s.weight > 0.0) {
            return Err(invalid("target coincides with a site"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidEstimate {
    pub estimate: f64,
    pub vertex: [f64; 2],
    /// Difference-in-difference of the accumulators.
    pub delta: f64,
    /// The same difference-in-difference of region areas.
    pub sliver_area: f64,
    pub sliver_cells: usize,
}

/// Density at the vertex shared by regions `i`, `j`, `k` from four
/// accumulator evaluations: growing `phi_j` and `phi_k` by `delta_phi`
/// separately and together isolates the sliver of `S_i` next to the vertex.
pub fn did_density_estimate(
    sites: &[SitePoint],
    grid: &RasterGrid,
    density: &DensityField,
    i: usize,
    j: usize,
    k: usize,
    delta_phi: f64,
) -> Result<DidEstimate> {
    for idx in [i, j, k] {
        if idx >= sites.len() {
            return Err(Error::OutOfRange {
                index: idx,
                len: sites.len(),
            });
        }
    }
    if i == j || j == k || i == k {
        return Err(invalid("vertex regions must be distinct"));
    }
    if !(delta_phi.is_finite() && delta_phi > 0.0) {
        return Err(invalid(format!("delta_phi must be positive, got {delta_phi}")));
    }
    let base = assign_regions(sites, grid)?;
    let vertex = locate_vertex(&base, grid, i, j, k).ok_or_else(|| {
        invalid(format!("regions {i}, {j}, {k} do not meet at a common vertex"))
    })?;
    let samples = density.sample(grid);

    let variant = |dj: f64, dk: f64| -> Result<LabelRaster> {
        let mut w = sites.to_vec();
        w[j].weight += dj;
        w[k].weight += dk;
        assign_regions(&w, grid)
    };
    let grown_j = variant(delta_phi, 0.0)?;
    let grown_k = variant(0.0, delta_phi)?;
    let grown_jk = variant(delta_phi, delta_phi)?;

    // Per-cell signed membership of the sliver, accumulated once.
    let target = i as u32;
    let mut mass = 0.0;
    let mut cells: i64 = 0;
    for (c, &rho) in samples.iter().enumerate() {
        let sign = (base.labels[c] == target) as i64 - (grown_j.labels[c] == target) as i64
            - (grown_k.labels[c] == target) as i64
            + (grown_jk.labels[c] == target) as i64;
        if sign != 0 {
            mass += sign as f64 * rho;
            cells += sign;
        }
    }
    if cells < 4 {
        return Err(Error::ResolutionExceeded(format!(
            "difference-in-difference sliver spans {cells} cells; need at least 4"
        )));
    }
    let cell_area = grid.cell_area();
    let delta = mass * cell_area;
    let sliver_area = cells as f64 * cell_area;
    Ok(DidEstimate {
        estimate: delta / sliver_area,
        vertex,
        delta,
        sliver_area,
        sliver_cells: cells as usize,
    })
}

/// Writes the labels as a binary PGM (one gray level per site) and a
/// sidecar text header with the bbox, resolution and site table.
pub fn export_raster(
    labels: &LabelRaster,
    grid: &RasterGrid,
    sites: &[SitePoint],
    pgm_path: &Path,
) -> io::Result<()> {
    if labels.n_sites > 256 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "PGM export supports at most 256 sites",
        ));
    }
    let mut file = io::BufWriter::new(std::fs::File::create(pgm_path)?);
    write!(file, "P5\n{} {}\n255\n", labels.nx, labels.ny)?;
    let scale = if labels.n_sites > 1 {
        255 / (labels.n_sites - 1)
    } else {
        0
    };
    // PGM rows run top to bottom.
    for iy in (0..labels.ny).rev() {
        let row: Vec<u8> = (0..labels.nx)
            .map(|ix| (labels.label(ix, iy) as usize * scale) as u8)
            .collect();
        file.write_all(&row)?;
    }
    file.flush()?;
    std::fs::write(pgm_path.with_extension("txt"), raster_header(labels, grid, sites))
}

pub fn raster_header(labels: &LabelRaster, grid: &RasterGrid, sites: &[SitePoint]) -> String {
    let mut s = String::new();
    let scale = if labels.n_sites > 1 {
        255 / (labels.n_sites - 1)
    } else {
        0
    };
    let _ = writeln!(s, "format: mw-voronoi-raster/1");
    let _ = writeln!(
        s,
        "bbox: {} {} {} {}",
        grid.bbox.min[0], grid.bbox.min[1], grid.bbox.max[0], grid.bbox.max[1]
    );
    let _ = writeln!(s, "resolution: {} {}", grid.nx, grid.ny);
    let _ = writeln!(s, "sites: {}", sites.len());
    let _ = writeln!(s, "# index gray x y weight cells");
    let counts = labels.counts();
    for (i, site) in sites.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i} {} {} {} {} {}",
            i * scale,
            site.position[0],
            site.position[1],
            site.weight,
            counts.get(i).copied().unwrap_or(0)
        );
    }
    s
}
