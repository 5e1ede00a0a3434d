//! Analytic cell-boundary geometry for a homogeneous single cell.
//!
//! The concerned gNB sits at the origin with a neighbor at `(R, 0)`. After
//! an adjustment the concerned cell's offset power is `beta` times that of
//! its neighbors, and under inverse-square decay the virtual boundary
//! between the two is the locus `beta * ((x - R)^2 + y^2) = x^2 + y^2`.
//! When neighbors sit at a fixed angular interval `theta`, each neighbor
//! owns a wedge of half-angle `theta / 2` around its direction and
//! [`area_multiplier`] gives the ratio of the cell area after and before
//! the adjustment.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Below this distance from unity `alpha` is returned as exactly 1.
pub const UNITY_CUTOFF: f64 = 1e-6;
/// Below this distance from unity `alpha` is evaluated by series expansion.
pub const SERIES_CUTOFF: f64 = 1e-2;
/// Default angular interval between neighbors (hexagonal deployment).
pub const DEFAULT_THETA_DEG: f64 = 60.0;
/// Radius, in units of `R`, at which unbounded boundary rays are clipped.
pub const ESCAPE_CLIP: f64 = 2.0;

/// A change in transmission power and cell individual offset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdjustmentDelta {
    pub delta_power_db: f64,
    pub delta_cio_db: f64,
}

impl AdjustmentDelta {
    pub fn new(delta_power_db: f64, delta_cio_db: f64) -> Result<Self> {
        let adj = Self {
            delta_power_db,
            delta_cio_db,
        };
        adj.validate()?;
        Ok(adj)
    }

    pub const fn zero() -> Self {
        Self {
            delta_power_db: 0.0,
            delta_cio_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta_power_db.is_finite() || !self.delta_cio_db.is_finite() {
            return Err(invalid(format!(
                "adjustment deltas must be finite, got power {} dB, cio {} dB",
                self.delta_power_db, self.delta_cio_db
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.delta_power_db + self.delta_cio_db == 0.0
    }

    pub fn beta(&self) -> Result<f64> {
        beta_from_delta(*self)
    }
}

/// Angular interval between neighbors plus the optional inter-site distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorGeometry {
    pub theta_rad: f64,
    pub neighbor_distance: Option<f64>,
}

impl SectorGeometry {
    pub fn new(theta_rad: f64, neighbor_distance: Option<f64>) -> Result<Self> {
        check_theta(theta_rad)?;
        if let Some(r) = neighbor_distance {
            check_distance(r)?;
        }
        Ok(Self {
            theta_rad,
            neighbor_distance,
        })
    }

    pub fn from_degrees(theta_deg: f64, neighbor_distance: Option<f64>) -> Result<Self> {
        Self::new(theta_deg.to_radians(), neighbor_distance)
    }
}

impl Default for SectorGeometry {
    fn default() -> Self {
        Self {
            theta_rad: DEFAULT_THETA_DEG.to_radians(),
            neighbor_distance: None,
        }
    }
}

/// Virtual boundary between the concerned cell (origin) and a neighbor at `(R, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryShape {
    Circle { center_x: f64, radius: f64 },
    BisectorLine { x: f64 },
}

impl BoundaryShape {
    /// Point on the boundary at parameter `t`: the angle around the circle
    /// center, or the `y` coordinate along the bisector.
    pub fn point(&self, t: f64) -> [f64; 2] {
        match *self {
            BoundaryShape::Circle { center_x, radius } => {
                [center_x + radius * t.cos(), radius * t.sin()]
            }
            BoundaryShape::BisectorLine { x } => [x, t],
        }
    }
}

/// `beta = 10^(0.1 (delta + delta_o))`.
pub fn beta_from_delta(adj: AdjustmentDelta) -> Result<f64> {
    adj.validate()?;
    Ok(10f64.powf(0.1 * (adj.delta_power_db + adj.delta_cio_db)))
}

/// Residual of the equal-offset-power condition, relative to `x^2 + y^2`.
pub fn power_equality_residual(beta: f64, r: f64, p: [f64; 2]) -> f64 {
    let own = p[0] * p[0] + p[1] * p[1];
    let other = (p[0] - r).powi(2) + p[1] * p[1];
    (beta * other - own).abs() / own.max(beta * other)
}

pub fn apollonius_boundary(beta: f64, r: f64) -> Result<BoundaryShape> {
    check_beta(beta)?;
    check_distance(r)?;
    if beta == 1.0 {
        return Ok(BoundaryShape::BisectorLine { x: r / 2.0 });
    }
    let one_minus = 1.0 - beta;
    Ok(BoundaryShape::Circle {
        center_x: -beta * r / one_minus,
        radius: beta.sqrt() * r / one_minus.abs(),
    })
}

/// Central angle of the shrunken arc, `theta/2 - asin(sqrt(beta) sin(theta/2))`.
pub fn gamma_angle(beta: f64, theta_rad: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("gamma requires 0 < beta < 1, got {beta}")));
    }
    check_theta(theta_rad)?;
    let half = theta_rad / 2.0;
    Ok(half - (beta.sqrt() * half.sin()).asin())
}

/// Which branch of the multiplier produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRegime {
    Identity,
    NearUnitySeries,
    Shrink,
    Reflected,
    /// `beta > 1` and the wedge rays miss the neighbor's Apollonius circle:
    /// the true grown region is unbounded, the reflection rule is still used.
    ReflectedUnbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub alpha: f64,
    pub regime: AlphaRegime,
}

/// Ratio of the cell area after and before an adjustment, `alpha(beta | theta)`.
pub fn area_multiplier(beta: f64, theta_rad: f64) -> Result<f64> {
    area_multiplier_detailed(beta, theta_rad).map(|m| m.alpha)
}

pub fn area_multiplier_detailed(beta: f64, theta_rad: f64) -> Result<Multiplier> {
    check_beta(beta)?;
    check_theta(theta_rad)?;
    if beta == 1.0 {
        return Ok(Multiplier {
            alpha: 1.0,
            regime: AlphaRegime::Identity,
        });
    }
    if beta < 1.0 {
        // Reciprocal rounding is stable after one round trip, so evaluating
        // at 1 / (1 / beta) makes the reflection identity exact from both sides.
        let canonical = 1.0 / (1.0 / beta);
        let b = if canonical > 0.0 { canonical } else { beta };
        let (alpha, regime) = shrink_multiplier(b, theta_rad);
        return Ok(Multiplier { alpha, regime });
    }
    let (shrunk, inner) = shrink_multiplier(1.0 / beta, theta_rad);
    let regime = match inner {
        AlphaRegime::Identity => AlphaRegime::Identity,
        AlphaRegime::NearUnitySeries => AlphaRegime::NearUnitySeries,
        _ if beta * (theta_rad / 2.0).sin().powi(2) >= 1.0 => AlphaRegime::ReflectedUnbounded,
        _ => AlphaRegime::Reflected,
    };
    Ok(Multiplier {
        alpha: 2.0 - shrunk,
        regime,
    })
}

// beta in (0, 1).
fn shrink_multiplier(beta: f64, theta_rad: f64) -> (f64, AlphaRegime) {
    let eps = 1.0 - beta;
    if eps < UNITY_CUTOFF {
        return (1.0, AlphaRegime::Identity);
    }
    let half = theta_rad / 2.0;
    if eps < SERIES_CUTOFF {
        return (near_unity_series(eps, half), AlphaRegime::NearUnitySeries);
    }
    let root = beta.sqrt();
    let gamma = half - (root * half.sin()).asin();
    let alpha = 4.0 * beta * (gamma - root * gamma.sin()) / (eps * eps * half.tan());
    (alpha.clamp(f64::MIN_POSITIVE, 1.0), AlphaRegime::Shrink)
}

/// Expansion of the shrink branch in `eps = 1 - beta` through third order.
/// Numerator and denominator of the closed form both vanish like `eps^2`.
fn near_unity_series(eps: f64, half: f64) -> f64 {
    let s2 = half.sin().powi(2);
    let c2 = 1.0 - s2;
    let k1 = (2.0 * s2 - 3.0) / (6.0 * c2);
    let k2 = -(8.0 * s2 * s2 - 20.0 * s2 + 9.0) / (48.0 * c2 * c2);
    let k3 = (16.0 * s2.powi(3) - 56.0 * s2 * s2 + 50.0 * s2 - 15.0) / (160.0 * c2.powi(3));
    1.0 + eps * (k1 + eps * (k2 + eps * k3))
}

/// Area of the cell's part of one neighbor wedge for `beta < 1`.
pub fn shaded_area(beta: f64, theta_rad: f64, r: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("shaded area requires 0 < beta < 1, got {beta}")));
    }
    check_theta(theta_rad)?;
    check_distance(r)?;
    let eps = 1.0 - beta;
    if eps < SERIES_CUTOFF {
        // Same cancellation as the multiplier; go through it.
        let alpha = area_multiplier(beta, theta_rad)?;
        return Ok(alpha * wedge_baseline_area(theta_rad, r));
    }
    let gamma = gamma_angle(beta, theta_rad)?;
    Ok((gamma - beta.sqrt() * gamma.sin()) * beta * r * r / (eps * eps))
}

/// Area of the `beta = 1` wedge triangle, `R^2 tan(theta/2) / 4`.
pub fn wedge_baseline_area(theta_rad: f64, r: f64) -> f64 {
    0.25 * r * r * (theta_rad / 2.0).tan()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
}

pub const MIN_MC_SAMPLES: u64 = 10_000;

/// Monte Carlo estimate of `alpha` for `beta` in `(0, 1]`: uniform samples
/// over the `beta = 1` wedge triangle, counting those the concerned cell
/// still wins.
pub fn mc_area_ratio(beta: f64, theta_rad: f64, samples: u64, seed: u64) -> Result<McEstimate> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid(format!("Monte Carlo oracle requires 0 < beta <= 1, got {beta}")));
    }
    check_theta(theta_rad)?;
    if samples < MIN_MC_SAMPLES {
        return Err(invalid(format!(
            "Monte Carlo oracle needs at least {MIN_MC_SAMPLES} samples, got {samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tan_half = (theta_rad / 2.0).tan();
    let mut hits = 0u64;
    for _ in 0..samples {
        // Apex at the origin, base on x = 1/2: x has density proportional to x.
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let x = 0.5 * u.sqrt();
        let y = x * tan_half * (2.0 * v - 1.0);
        if beta * ((x - 1.0).powi(2) + y * y) >= x * x + y * y {
            hits += 1;
        }
    }
    let n = samples as f64;
    let p = hits as f64 / n;
    Ok(McEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        samples,
    })
}

/// Distance from the gNB to the boundary along a ray at angle `omega` from
/// the neighbor direction, or `None` if the ray never meets it.
pub fn boundary_radius(beta: f64, r: f64, omega: f64) -> Option<f64> {
    let (s, c) = omega.sin_cos();
    if beta == 1.0 {
        return (c > 0.0).then(|| r / (2.0 * c));
    }
    let disc = beta * (1.0 - beta * s * s);
    if disc < 0.0 {
        return None;
    }
    if beta < 1.0 {
        Some(r * (disc.sqrt() - beta * c) / (1.0 - beta))
    } else {
        let rho = r * (beta * c - disc.sqrt()) / (beta - 1.0);
        (rho > 0.0).then_some(rho)
    }
}

/// True wedge-area ratio by polar quadrature of the boundary radius.
///
/// Equals [`area_multiplier`] for `beta <= 1`; for `beta > 1` it measures
/// the outward-arc region the reflection rule approximates. `None` when the
/// grown region is unbounded.
pub fn wedge_area_ratio(beta: f64, theta_rad: f64) -> Result<Option<f64>> {
    check_beta(beta)?;
    check_theta(theta_rad)?;
    const PANELS: usize = 4096;
    let half = theta_rad / 2.0;
    let h = theta_rad / PANELS as f64;
    let mut acc = 0.0;
    for j in 0..=PANELS {
        let omega = -half + h * j as f64;
        let Some(rho) = boundary_radius(beta, 1.0, omega) else {
            return Ok(None);
        };
        let w = if j == 0 || j == PANELS {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * 0.5 * rho * rho;
    }
    Ok(Some(acc * h / 3.0 / wedge_baseline_area(theta_rad, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    /// Some rays missed the boundary and were clipped at `ESCAPE_CLIP * R`.
    pub clipped: bool,
}

impl Polyline {
    pub fn max_radius(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }
}

/// Closed serving-region boundary of the concerned gNB (at the origin) with
/// `n_neighbors` neighbors at distance `R`, the first along `+x` and the
/// rest at successive multiples of `theta`. Each wedge contributes
/// `n_points` samples from ray to ray. When the neighbors cover less than
/// the full circle the boundary closes through the gNB, as for a sectored
/// cell bounded by rays from its site. The first point is repeated last.
pub fn boundary_polyline(
    beta: f64,
    theta_rad: f64,
    r: f64,
    n_neighbors: usize,
    n_points: usize,
) -> Result<Polyline> {
    check_beta(beta)?;
    check_theta(theta_rad)?;
    check_distance(r)?;
    if n_neighbors < 3 {
        return Err(invalid(format!("need at least 3 neighbors, got {n_neighbors}")));
    }
    if n_points < 8 {
        return Err(invalid(format!("need at least 8 points per wedge, got {n_points}")));
    }
    let coverage = theta_rad * n_neighbors as f64;
    let full = 2.0 * PI;
    if coverage > full + 1e-9 {
        return Err(invalid(format!(
            "{n_neighbors} neighbors at {:.3} deg overlap the full circle",
            theta_rad.to_degrees()
        )));
    }
    let closes_round = (full - coverage).abs() <= 1e-9;
    let half = theta_rad / 2.0;
    let mut points = Vec::with_capacity(n_neighbors * n_points + 2);
    let mut clipped = false;
    for k in 0..n_neighbors {
        let heading = theta_rad * k as f64;
        for j in 0..n_points {
            if k > 0 && j == 0 {
                continue;
            }
            if closes_round && k + 1 == n_neighbors && j + 1 == n_points {
                continue;
            }
            let omega = -half + theta_rad * j as f64 / (n_points - 1) as f64;
            let rho = match boundary_radius(beta, r, omega) {
                Some(rho) if rho <= ESCAPE_CLIP * r => rho,
                _ => {
                    clipped = true;
                    ESCAPE_CLIP * r
                }
            };
            let (s, c) = (heading + omega).sin_cos();
            points.push([rho * c, rho * s]);
        }
    }
    if !closes_round {
        points.push([0.0, 0.0]);
    }
    let first = points[0];
    points.push(first);
    Ok(Polyline { points, clipped })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid(format!("beta must be finite and positive, got {beta}")));
    }
    Ok(())
}

fn check_theta(theta_rad: f64) -> Result<()> {
    if !(theta_rad > 0.0 && theta_rad < PI) {
        return Err(invalid(format!(
            "theta must lie in (0, 180) degrees, got {} deg",
            theta_rad.to_degrees()
        )));
    }
    Ok(())
}

fn check_distance(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return Err(invalid(format!("neighbor distance must be positive, got {r}")));
    }
    Ok(())
}
