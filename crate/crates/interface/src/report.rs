//! Shared computations behind the `alpha` command and the what-if service.

use serde::Serialize;

use celladj_core::geometry::{area_multiplier_detailed, boundary_polyline, mc_area_ratio, AlphaRegime, McEstimate};
use celladj_core::AdjustmentDelta;

use crate::error::{usage, Result};

/// Seed of the Monte Carlo generator used by `alpha --mc-samples`.
pub const MC_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaReport {
    pub delta_db: f64,
    pub delta_cio_db: f64,
    pub theta_deg: f64,
    pub beta: f64,
    pub alpha: f64,
    pub regime: AlphaRegime,
    /// Monte Carlo estimate; for `beta > 1` it is `2 - MC(1 / beta)`.
    pub monte_carlo: Option<McEstimate>,
}

pub fn alpha_report(delta_db: f64, delta_cio_db: f64, theta_deg: f64, mc_samples: Option<u64>) -> Result<AlphaReport> {
    if !theta_deg.is_finite() {
        return Err(usage(format!("--theta-deg must be finite, got {theta_deg}")));
    }
    let adj = AdjustmentDelta::new(delta_db, delta_cio_db)?;
    let beta = adj.beta()?;
    let theta = theta_deg.to_radians();
    let m = area_multiplier_detailed(beta, theta)?;
    let monte_carlo = match mc_samples {
        None => None,
        Some(n) => {
            let est = if beta <= 1.0 {
                mc_area_ratio(beta, theta, n, MC_SEED)?
            } else {
                let e = mc_area_ratio(1.0 / beta, theta, n, MC_SEED)?;
                McEstimate {
                    estimate: 2.0 - e.estimate,
                    ..e
                }
            };
            Some(est)
        }
    };
    Ok(AlphaReport {
        delta_db,
        delta_cio_db,
        theta_deg,
        beta,
        alpha: m.alpha,
        regime: m.regime,
        monte_carlo,
    })
}

impl AlphaReport {
    /// Text printed by the `alpha` command; floats use the shortest
    /// representation that round-trips.
    pub fn to_text(&self) -> String {
        let mut s = format!("beta={:?}\nalpha={:?}\nregime={}\n", self.beta, self.alpha, regime_name(self.regime));
        if let Some(mc) = &self.monte_carlo {
            let agree = (mc.estimate - self.alpha).abs() <= 3.0 * mc.stderr;
            s.push_str(&format!(
                "mc_alpha={:?}\nmc_stderr={:?}\nmc_samples={}\nmc_within_3_stderr={agree}\n",
                mc.estimate, mc.stderr, mc.samples
            ));
        }
        s
    }
}

pub fn regime_name(r: AlphaRegime) -> &'static str {
    match r {
        AlphaRegime::Identity => "identity",
        AlphaRegime::NearUnitySeries => "near_unity_series",
        AlphaRegime::Shrink => "shrink",
        AlphaRegime::Reflected => "reflected",
        AlphaRegime::ReflectedUnbounded => "reflected_unbounded",
    }
}

/// Points per wedge of a boundary polyline.
pub const POLYLINE_POINTS: usize = 33;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundary {
    pub points: Vec<[f64; 2]>,
    pub clipped: bool,
}

/// Cell boundary around a gNB at `center` with neighbors at `spacing`,
/// in the same coordinates as the layout.
pub fn boundary(beta: f64, theta_deg: f64, spacing: f64, center: [f64; 2]) -> Result<Boundary> {
    let theta = theta_deg.to_radians();
    let n = ((std::f64::consts::TAU / theta).floor() as usize).max(3);
    let p = boundary_polyline(beta, theta, spacing, n, POLYLINE_POINTS)?;
    Ok(Boundary {
        points: p.points.iter().map(|q| [q[0] + center[0], q[1] + center[1]]).collect(),
        clipped: p.clipped,
    })
}
