use celladj_core::frame::{Metric, STEPS_PER_WEEK};
use celladj_core::geometry::{area_multiplier, wedge_area_ratio};
use celladj_core::mwvoronoi::{DensityComponent, DensityField};
use celladj_core::simulator::{
    region_masses, serving_workload, synthesize, AdjustmentSpec, NoiseConfig, ScenarioConfig,
};
use celladj_core::Error;

fn noise_free() -> ScenarioConfig {
    ScenarioConfig {
        noise: NoiseConfig::off(),
        missing_rate: 0.0,
        ..ScenarioConfig::homogeneous()
    }
}

fn with_center_delta(mut cfg: ScenarioConfig, delta: f64, at: usize) -> ScenarioConfig {
    cfg.layout.tx_power_dbm = 40.0;
    cfg.adjustments.push(AdjustmentSpec {
        cell_id: 0,
        delta_power_db: delta,
        delta_cio_db: 0.0,
        apply_index: at,
    });
    cfg
}

#[test]
fn center_hex_area_matches_closed_form() {
    let cfg = noise_free();
    let masses = region_masses(&cfg, 0).unwrap();
    let r = cfg.layout.spacing_m;
    let hex = 3f64.sqrt() / 2.0 * r * r;
    let rho = 1e-3;
    assert!((masses[0] - rho * hex).abs() / (rho * hex) < 0.01, "{}", masses[0]);
    for m in &masses[1..7] {
        assert!((m - masses[0]).abs() / masses[0] < 0.02);
    }
}

#[test]
fn multiplier_law_shrinking() {
    for delta in [-6.0, -3.0] {
        let cfg = with_center_delta(noise_free(), delta, 10);
        let before = region_masses(&cfg, 0).unwrap()[0];
        let after = region_masses(&cfg, 10).unwrap()[0];
        let alpha = area_multiplier(10f64.powf(0.1 * delta), 60f64.to_radians()).unwrap();
        let ratio = after / before;
        println!("delta {delta}: ratio {ratio:.5} alpha {alpha:.5}");
        assert!((ratio - alpha).abs() / alpha < 0.05);
    }
}

#[test]
fn growing_cell_matches_exact_wedge_area() {
    // For beta > 1 the raster follows the numerically integrated outward
    // boundary, not the reflected multiplier.
    let cfg = with_center_delta(noise_free(), 3.0, 10);
    let ratio = region_masses(&cfg, 10).unwrap()[0] / region_masses(&cfg, 0).unwrap()[0];
    let beta = 10f64.powf(0.3);
    let exact = wedge_area_ratio(beta, 60f64.to_radians()).unwrap().unwrap();
    assert!((ratio - exact).abs() / exact < 0.01, "{ratio} vs {exact}");
    let reflected = area_multiplier(beta, 60f64.to_radians()).unwrap();
    assert!((ratio - reflected).abs() / reflected > 0.05);

    // At +6 dB the boundary nearly escapes the wedge and the region leaks
    // between the first-ring discs toward the second ring.
    let cfg = with_center_delta(noise_free(), 6.0, 10);
    let ratio = region_masses(&cfg, 10).unwrap()[0] / region_masses(&cfg, 0).unwrap()[0];
    let exact = wedge_area_ratio(10f64.powf(0.6), 60f64.to_radians()).unwrap().unwrap();
    assert!(ratio > exact * 1.05, "{ratio} vs {exact}");
}

#[test]
fn edge_blob_breaks_the_law() {
    let mut cfg = with_center_delta(noise_free(), -6.0, 10);
    cfg.density = DensityField::new(vec![DensityComponent::Gaussian {
        center: [0.45 * cfg.layout.spacing_m, 0.0],
        sigma: 0.05 * cfg.layout.spacing_m,
        amplitude: 500.0,
    }])
    .unwrap();
    let ratio = region_masses(&cfg, 10).unwrap()[0] / region_masses(&cfg, 0).unwrap()[0];
    let alpha = area_multiplier(10f64.powf(-0.6), 60f64.to_radians()).unwrap();
    assert!((ratio - alpha).abs() / alpha > 0.05, "{ratio} vs {alpha}");
}

#[test]
fn common_offset_leaves_workloads_unchanged() {
    let base = noise_free();
    let grid = base.grid().unwrap();
    let mut boosted = base.clone();
    boosted.layout.tx_power_dbm -= 5.0;
    for id in [0, 3, 11] {
        assert_eq!(
            serving_workload(&base, id, 40, &grid).unwrap(),
            serving_workload(&boosted, id, 40, &grid).unwrap()
        );
    }
}

#[test]
fn serving_workload_agrees_with_synthesize() {
    let mut cfg = with_center_delta(ScenarioConfig::homogeneous(), -6.0, 700);
    cfg.missing_rate = 0.0;
    cfg.export_cells = vec![0, 1];
    let ds = synthesize(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    for (id, t) in [(0, 5), (0, 900), (1, 900)] {
        let w = serving_workload(&cfg, id, t, &grid).unwrap();
        let f = ds.frame(id).unwrap();
        for (m, v) in w.iter().enumerate() {
            assert_eq!(f.get(t, m), Some(*v));
        }
    }
    let mut coarse = cfg.clone();
    coarse.raster_resolution = 16;
    coarse.layout.rings = 8;
    let g = coarse.grid().unwrap();
    assert!(matches!(serving_workload(&coarse, 0, 0, &g), Err(Error::ResolutionExceeded(_))));
    assert!(matches!(serving_workload(&cfg, 99, 0, &grid), Err(Error::UnknownCell(99))));
    assert!(matches!(serving_workload(&cfg, 0, 1_000_000, &grid), Err(Error::OutOfRange { .. })));
}

#[test]
fn deterministic_and_in_range() {
    let mut cfg = ScenarioConfig::homogeneous();
    cfg.export_cells = vec![0, 4, 12];
    let a = synthesize(&cfg).unwrap();
    let b = synthesize(&cfg).unwrap();
    assert_eq!(a, b);
    for f in &a.frames {
        f.validate_timeline().unwrap();
        let mut missing = 0;
        for t in 0..f.len() {
            for m in Metric::ALL {
                let Some(v) = f.get(t, m.index()) else {
                    missing += 1;
                    continue;
                };
                match m.kind() {
                    celladj_core::frame::MetricKind::Rate => assert!((0.0..=1.0).contains(&v)),
                    celladj_core::frame::MetricKind::Percent => assert!((0.0..=100.0).contains(&v)),
                    celladj_core::frame::MetricKind::Count => assert!(v >= 0.0),
                    celladj_core::frame::MetricKind::Decibel => assert!(v.is_finite()),
                }
            }
        }
        let rate = missing as f64 / (f.len() * 17) as f64;
        assert!((rate - 0.01).abs() < 0.003, "missing rate {rate}");
    }
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(synthesize(&other).unwrap(), a);
}

/// Pearson correlation between the series and itself shifted by `lag`.
fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let (a, b) = (&x[..x.len() - lag], &x[lag..]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
    let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn weekly_seasonality_visible() {
    let mut cfg = ScenarioConfig::homogeneous();
    cfg.export_cells = vec![0];
    cfg.missing_rate = 0.0;
    let ds = synthesize(&cfg).unwrap();
    let f = ds.frame(0).unwrap();
    for m in [Metric::RrcConnEstablished, Metric::UlPrbNoiseLevel, Metric::ConnSuccessRate] {
        let x: Vec<f64> = (0..f.len()).map(|t| f.value(t, m.index())).collect();
        let weekly = autocorrelation(&x, STEPS_PER_WEEK);
        let half_day = autocorrelation(&x, 48);
        assert!(weekly > 0.8 && weekly > half_day, "{m:?}: {weekly} vs {half_day}");
    }
    let mut clean = cfg.clone();
    clean.noise = NoiseConfig::off();
    let f = synthesize(&clean).unwrap().frames.remove(0);
    for t in 0..f.len() - STEPS_PER_WEEK {
        assert_eq!(f.row(t), f.row(t + STEPS_PER_WEEK));
    }
}

#[test]
fn power_cut_drops_workload_as_a_step() {
    let k = 1000;
    let mut cfg = with_center_delta(ScenarioConfig::homogeneous(), -6.0, k);
    cfg.export_cells = vec![0];
    cfg.missing_rate = 0.0;
    let adjusted = synthesize(&cfg).unwrap().frames.remove(0);
    let mut free_cfg = cfg.clone();
    free_cfg.adjustments.clear();
    let free = synthesize(&free_cfg).unwrap().frames.remove(0);
    let alpha = area_multiplier(10f64.powf(-0.6), 60f64.to_radians()).unwrap();
    let m = Metric::RrcConnEstablished.index();
    for t in 0..cfg.temporal.horizon {
        let r = adjusted.value(t, m) / free.value(t, m);
        if t < k {
            assert_eq!(r, 1.0);
        } else {
            assert!((r - alpha).abs() < 0.02, "t {t}: {r}");
        }
    }
    assert_eq!(adjusted.first_adjustment(), Some(k));
    assert!(free.adjustments.is_empty());
}
