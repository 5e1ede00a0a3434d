//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines appear
//! in `cargo test` output. The process fails when a criterion fails that
//! is not listed in `EXPECTED_FAILURES`.

use std::f64::consts::TAU;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use celladj_core::evalmetrics::{rmse, smape, smape_term};
use celladj_core::frame::{Cluster, MetricFrame, STEPS_PER_DAY, STEPS_PER_WEEK};
use celladj_core::geometry::{apollonius_boundary, area_multiplier, mc_area_ratio, BoundaryShape};
use celladj_core::mwvoronoi::{
    assign_regions, did_density_estimate, BBox, DensityComponent, DensityField, RasterGrid, SitePoint,
};
use celladj_core::simulator::{region_masses, synthesize, synthesize_cells, AdjustmentSpec, NoiseConfig, ScenarioConfig};
use celladj_core::AdjustmentDelta;
use celladj_forecast::gradcheck::grad_check;
use celladj_forecast::model::{sample_mask, LossScale};
use celladj_forecast::naive::{seasonal_naive, DEFAULT_PERIOD};
use celladj_forecast::pipeline::workload_ratio;
use celladj_forecast::train::{sample_parts, TrainConfig, WindowSet};
use celladj_forecast::window::adjustment_free_starts;
use celladj_forecast::{
    masked_mse, predict_adjusted, predict_free, pretrain, GraphicalModel, GraphicalTransformer, ModelConfig, Scaler,
    WindowSample,
};
use celladj_interface::cli::{checksums, run, Cli, SCENARIO_FILE};
use celladj_interface::csvio::{read_dataset, write_frame_file};
use celladj_interface::service::{router, ServiceState};

/// Criteria known to fail; see the project decision notes.
const EXPECTED_FAILURES: &[&str] = &["simulator multiplier law"];

const TRAIN_END: usize = 3 * STEPS_PER_WEEK;

struct Verdict {
    name: &'static str,
    pass: bool,
    details: Vec<String>,
    elapsed: Duration,
}

fn check(name: &'static str, f: impl FnOnce(&mut Vec<String>) -> bool) -> Verdict {
    let start = Instant::now();
    let mut details = Vec::new();
    let pass = f(&mut details);
    let v = Verdict {
        name,
        pass,
        details,
        elapsed: start.elapsed(),
    };
    println!(
        "{} {} [{:.1} s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.name,
        v.elapsed.as_secs_f64()
    );
    for d in &v.details {
        println!("     {d}");
    }
    v
}

fn within(elapsed: Duration, limit_s: f64, d: &mut Vec<String>) -> bool {
    let ok = elapsed.as_secs_f64() < limit_s;
    d.push(format!("runtime {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()));
    ok
}

fn geometry_oracle(d: &mut Vec<String>) -> bool {
    let start = Instant::now();
    let mut ok = true;
    let mut worst = (0.0f64, 0.0, 0.0);
    for k in 1..=9 {
        let beta = k as f64 / 10.0;
        for theta_deg in [30.0, 60.0, 90.0, 120.0] {
            let theta = f64::to_radians(theta_deg);
            let a = area_multiplier(beta, theta).unwrap();
            let mc = mc_area_ratio(beta, theta, 1_000_000, 1000 * k + theta_deg as u64).unwrap();
            let err = (a - mc.estimate).abs();
            let tol = f64::max(0.01, 3.0 * mc.stderr);
            if err > tol {
                ok = false;
                d.push(format!("beta {beta} theta {theta_deg}: alpha {a:.6} mc {:.6} err {err:.2e}", mc.estimate));
            }
            if err > worst.0 {
                worst = (err, beta, theta_deg);
            }
        }
    }
    d.push(format!("36 pairs, worst |alpha - mc| = {:.2e} at beta {} theta {}", worst.0, worst.1, worst.2));
    within(start.elapsed(), 60.0, d) && ok
}

fn identities(d: &mut Vec<String>) -> bool {
    let start = Instant::now();
    let thetas = [15.0, 30.0, 60.0, 90.0, 120.0, 150.0];
    let mut ok = true;
    for &t in &thetas {
        let th = f64::to_radians(t);
        if area_multiplier(1.0, th).unwrap() != 1.0 {
            ok = false;
            d.push(format!("alpha(1 | {t}) != 1"));
        }
        for b in [1e-3, 0.05, 0.3, 0.7, 0.99, 0.9999, 1.0001, 1.5, 4.0, 250.0] {
            let s = area_multiplier(b, th).unwrap() + area_multiplier(1.0 / b, th).unwrap();
            if s != 2.0 {
                ok = false;
                d.push(format!("alpha({b}) + alpha(1/{b}) = {s:?} at theta {t}"));
            }
        }
        for b in [1.0 - 1e-4, 1.0 + 1e-4] {
            let e = (area_multiplier(b, th).unwrap() - 1.0).abs();
            if e > 1e-3 {
                ok = false;
                d.push(format!("|alpha({b}) - 1| = {e:.2e} at theta {t}"));
            }
        }
        let grid: Vec<f64> = (0..100).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 99.0)).collect();
        let values: Vec<f64> = grid.iter().map(|&b| area_multiplier(b, th).unwrap()).collect();
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            ok = false;
            d.push(format!("not increasing between beta {} and {} at theta {t}", grid[i], grid[i + 1]));
        }
    }
    d.push(format!("{} angles, 100-point log grid on [0.01, 100]", thetas.len()));
    within(start.elapsed(), 1.0, d) && ok
}

fn apollonius(d: &mut Vec<String>) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let beta = loop {
            let b = 10f64.powf(rng.random_range(-2.0..2.0));
            if (b - 1.0).abs() > 1e-3 {
                break b;
            }
        };
        let r: f64 = rng.random_range(1.0..5000.0);
        let shape = apollonius_boundary(beta, r).unwrap();
        assert!(matches!(shape, BoundaryShape::Circle { .. }));
        for k in 0..360 {
            let p = shape.point(TAU * k as f64 / 360.0);
            // Equal offset power: P / d_own^2 = beta P / d_neighbor^2.
            let own = p[0].hypot(p[1]).powi(2);
            let neighbor = (p[0] - r).hypot(p[1]).powi(2);
            let rel = (beta * neighbor - own).abs() / own.max(beta * neighbor);
            worst = worst.max(rel);
        }
    }
    d.push(format!("20 pairs x 360 points, worst relative residual {worst:.2e}"));
    worst <= 1e-9
}

fn nearest_site(points: &[[f64; 2]], grid: &RasterGrid) -> Vec<u32> {
    let mut out = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let c = grid.center(ix, iy);
            let mut best = (f64::INFINITY, 0u32);
            for (i, p) in points.iter().enumerate() {
                let dist = (c[0] - p[0]).hypot(c[1] - p[1]);
                if dist < best.0 {
                    best = (dist, i as u32);
                }
            }
            out.push(best.1);
        }
    }
    out
}

fn sites(points: &[[f64; 2]], weights: &[f64]) -> Vec<SitePoint> {
    points
        .iter()
        .zip(weights)
        .map(|(&p, &w)| SitePoint::new(p, w).unwrap())
        .collect()
}

fn mw_voronoi(d: &mut Vec<String>) -> bool {
    let start = Instant::now();
    let mut ok = true;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let grid = RasterGrid::square(BBox::centered(1.0), 256).unwrap();
    for trial in 0..10 {
        let n = rng.random_range(2..12);
        let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let w: f64 = rng.random_range(0.1..10.0);
        let labels = assign_regions(&sites(&points, &vec![w; n]), &grid).unwrap();
        let differ = labels.labels().iter().zip(nearest_site(&points, &grid)).filter(|(a, b)| **a != *b).count();
        if differ != 0 {
            ok = false;
            d.push(format!("equal weights trial {trial}: {differ} labels differ from nearest-site"));
        }
    }
    d.push("equal weights: 10 random site sets match nearest-site labelling at 256^2".into());

    let mut worst = 0.0f64;
    for beta in [0.1f64, 0.25, 0.5, 2.0, 4.0] {
        let grid = RasterGrid::square(BBox::new([-3.0, -3.0], [5.0, 3.0]), 512).unwrap();
        let labels = assign_regions(&sites(&[[0.0, 0.0], [1.0, 0.0]], &[beta.sqrt(), 1.0]), &grid).unwrap();
        let BoundaryShape::Circle { center_x, radius } = apollonius_boundary(beta, 1.0).unwrap() else {
            unreachable!()
        };
        let cell = grid.cell_width().max(grid.cell_height());
        let dist = |p: [f64; 2]| ((p[0] - center_x).hypot(p[1]) - radius).abs();
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let here = labels.label(ix, iy);
                let right = ix + 1 < grid.nx && labels.label(ix + 1, iy) != here;
                let up = iy + 1 < grid.ny && labels.label(ix, iy + 1) != here;
                if right || up {
                    worst = worst.max(dist(grid.center(ix, iy)) / cell);
                }
            }
        }
    }
    if worst > 1.0 {
        ok = false;
    }
    d.push(format!("two-site boundary at 512^2: worst distance {worst:.3} raster cells (5 betas)"));

    let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]];
    let grid = RasterGrid::square(BBox::new([-1.0, -1.0], [2.0, 2.0]), 1024).unwrap();
    let rho = DensityField::new(vec![DensityComponent::Linear {
        gradient: [0.8, -0.5],
        offset: 2.0,
    }])
    .unwrap();
    let est = did_density_estimate(&sites(&pts, &[1.0, 1.2, 0.9]), &grid, &rho, 0, 1, 2, 0.02).unwrap();
    let truth = 2.0 + 0.8 * est.vertex[0] - 0.5 * est.vertex[1];
    let rel = (est.estimate - truth).abs() / truth;
    if rel >= 0.05 {
        ok = false;
    }
    d.push(format!(
        "DiD at 1024^2: estimate {:.4} vs linear density {truth:.4} at vertex ({:.3}, {:.3}), rel err {rel:.2e}",
        est.estimate, est.vertex[0], est.vertex[1]
    ));
    within(start.elapsed(), 120.0, d) && ok
}

fn center_ratio(mut cfg: ScenarioConfig, delta: f64) -> f64 {
    cfg.layout.tx_power_dbm = 40.0;
    cfg.adjustments.push(AdjustmentSpec {
        cell_id: 0,
        delta_power_db: delta,
        delta_cio_db: 0.0,
        apply_index: 10,
    });
    region_masses(&cfg, 10).unwrap()[0] / region_masses(&cfg, 0).unwrap()[0]
}

fn simulator_law(d: &mut Vec<String>) -> bool {
    let cfg = ScenarioConfig {
        noise: NoiseConfig::off(),
        missing_rate: 0.0,
        ..ScenarioConfig::homogeneous()
    };
    let mut ok = true;
    for delta in [-6.0, -3.0, 3.0, 6.0] {
        let ratio = center_ratio(cfg.clone(), delta);
        let alpha = area_multiplier(10f64.powf(0.1 * delta), 60f64.to_radians()).unwrap();
        let rel = (ratio - alpha).abs() / alpha;
        let pass = rel <= 0.05;
        ok &= pass;
        d.push(format!(
            "delta {delta:+}: center ratio {ratio:.5} alpha {alpha:.5} rel {rel:.3} {}",
            if pass { "ok" } else { "exceeds 5%" }
        ));
    }
    let mut blob = cfg.clone();
    blob.density = DensityField::new(vec![DensityComponent::Gaussian {
        center: [0.45 * blob.layout.spacing_m, 0.0],
        sigma: 0.05 * blob.layout.spacing_m,
        amplitude: 500.0,
    }])
    .unwrap();
    let ratio = center_ratio(blob, -6.0);
    let alpha = area_multiplier(10f64.powf(-0.6), 60f64.to_radians()).unwrap();
    let rel = (ratio - alpha).abs() / alpha;
    ok &= rel > 0.05;
    d.push(format!("edge blob, delta -6: ratio {ratio:.5} alpha {alpha:.5} rel {rel:.3} (must exceed 5%)"));
    ok
}

fn unit_scale() -> LossScale {
    LossScale {
        forecast: 1.0,
        reconstruction: 1.0,
        alignment: 1.0,
    }
}

fn scaled_gt(frames: &[MetricFrame], config: ModelConfig, limit: Option<usize>, seed: u64) -> GraphicalTransformer {
    let refs: Vec<&MetricFrame> = frames.iter().collect();
    GraphicalTransformer::new(GraphicalModel::standard(), Scaler::fit(&refs, limit).unwrap(), config, seed).unwrap()
}

struct Trained {
    gt: GraphicalTransformer,
    data: Vec<MetricFrame>,
}

/// Pooled masked RMSE in scaled space of the forecaster and of seasonal
/// naive over daily forecast starts in week 4 of every exported cell.
fn week4_rmse(gt: &GraphicalTransformer, frames: &[MetricFrame]) -> (f64, f64, usize) {
    let c = gt.config();
    let (mut sse_gt, mut sse_naive, mut n) = (0.0, 0.0, 0.0);
    let mut cases = 0;
    for f in frames {
        let scaled = gt.scaler.apply(f);
        for t in adjustment_free_starts(f, c.input_len, c.output_len, TRAIN_END..f.len(), STEPS_PER_DAY) {
            let pred = predict_free(gt, f, t).unwrap();
            for w in gt.windows(&scaled, t).unwrap() {
                let naive = seasonal_naive(&w, DEFAULT_PERIOD).unwrap();
                let a = masked_mse(&w.y, pred.scaled.get(w.cluster), &w.mask_y).unwrap();
                let b = masked_mse(&w.y, &naive, &w.mask_y).unwrap();
                sse_gt += a.value * a.observed;
                sse_naive += b.value * b.observed;
                n += a.observed;
            }
            cases += 1;
        }
    }
    ((sse_gt / n).sqrt(), (sse_naive / n).sqrt(), cases)
}

fn forecaster(d: &mut Vec<String>, trained: &mut Option<Trained>) -> bool {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let data = synthesize(&ScenarioConfig::sanity()).unwrap().frames;
        let mut ok = true;

        let small = ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            d_ff: 16,
            input_len: 16,
            output_len: 8,
            mask_ratio: 0.7,
        };
        let gt = scaled_gt(&data, small.clone(), None, 5);
        let scaled = gt.scaler.apply(&data[0]);
        let mut worst = 0.0f64;
        let mut largest = 0;
        for cluster in Cluster::ALL {
            let model = gt.model(cluster);
            largest = largest.max(model.params.n_scalars());
            let w = WindowSample::from_frame(&gt.graph, cluster, &scaled, 200, 16, 8).unwrap();
            let mask = sample_mask(16, w.n_metrics(), 0.7, &mut ChaCha8Rng::seed_from_u64(cluster as u64));
            worst = worst.max(grad_check(model, &w, &mask, &unit_scale(), 1e-4).max_relative_error);
        }
        let grad_ok = worst < 1e-4 && largest <= 5000;
        ok &= grad_ok;
        d.push(format!("gradient check: max relative error {worst:.2e}, largest cluster model {largest} parameters"));

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut violations = 0;
        for trial in 0..200 {
            let cluster = Cluster::ALL[trial % 3];
            let model = gt.model(cluster);
            let t = rng.random_range(16..data[0].len() - 8);
            let mut w = WindowSample::from_frame(&gt.graph, cluster, &scaled, t, 16, 8).unwrap();
            let mask = sample_mask(16, w.n_metrics(), 0.7, &mut rng);
            let (r, c, o) = (rng.random_range(0..16), rng.random_range(0..w.n_metrics()), rng.random_range(0..8));
            w.mask_src[[r, c]] = 0.0;
            w.x_src[[r, c]] = 0.0;
            w.mask_y[[o, c]] = 0.0;
            let base = (sample_parts(model, &w, &mask, 1.0), model.forecast(&w).unwrap());
            let bump = rng.random_range(-1e6..1e6);
            let mut p = w.clone();
            p.x_src[[r, c]] += bump;
            p.y[[o, c]] -= bump;
            let pert = (sample_parts(model, &p, &mask, 1.0), model.forecast(&p).unwrap());
            let mm = masked_mse(&w.y, &base.1, &w.mask_y).unwrap() == masked_mse(&p.y, &base.1, &p.mask_y).unwrap();
            if base != pert || !mm {
                violations += 1;
            }
        }
        ok &= violations == 0;
        d.push(format!("masked-entry perturbation: {violations} of 200 trials changed a loss or forecast"));

        let short: Vec<MetricFrame> = data.iter().take(2).cloned().collect();
        let run_once = |threads: usize| {
            let mut g = scaled_gt(&short, small.clone(), None, 9);
            let set = WindowSet::adjustment_free(&g, &short, 0..3 * STEPS_PER_DAY, 8).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 8,
                learning_rate: 1e-3,
                seed: 4,
                eval_windows: 16,
                ..TrainConfig::default()
            };
            let p = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let r = p.install(|| pretrain(&mut g, &set, &cfg).unwrap());
            (g, r.trace.iter().map(|x| x.loss.to_bits()).collect::<Vec<u64>>())
        };
        let (a, ta) = run_once(1);
        let (b, tb) = run_once(1);
        let (c, tc) = run_once(4);
        let det = ta == tb && ta == tc && a == b && a == c;
        ok &= det;
        d.push(format!("seeded training: {} steps, traces and parameters bit-identical across reruns and 1/4 threads: {det}", ta.len()));

        let sanity_start = Instant::now();
        let mut gt = scaled_gt(&data, ModelConfig::default(), Some(TRAIN_END), 1);
        let set = WindowSet::adjustment_free(&gt, &data, 0..TRAIN_END, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = pretrain(&mut gt, &set, &cfg).unwrap();
        let ratio = report.final_loss / report.initial_loss;
        ok &= ratio < 0.3;
        d.push(format!(
            "sanity pre-training: {} windows, loss {:.4} -> {:.4} (ratio {ratio:.4}, limit 0.3), {:.1} s",
            report.windows,
            report.initial_loss,
            report.final_loss,
            sanity_start.elapsed().as_secs_f64()
        ));
        let (rg, rn, cases) = week4_rmse(&gt, &data);
        ok &= rg < rn;
        d.push(format!("week-4 masked RMSE (scaled, {cases} starts): forecaster {rg:.5} vs seasonal naive {rn:.5}"));
        *trained = Some(Trained { gt, data });
        within(start.elapsed(), 600.0, d) && ok
    })
}

fn end_to_end(d: &mut Vec<String>, trained: &Trained) -> bool {
    let gt = &trained.gt;
    let o = gt.config().output_len;
    let delta = AdjustmentDelta::new(-6.0, 0.0).unwrap();
    let (mut sse_adj, mut sse_free, mut n) = (0.0, 0.0, 0usize);
    let mut worst_ratio = 0.0f64;
    let mut ok = true;
    for f in &trained.data {
        let mut cfg = ScenarioConfig::sanity();
        cfg.adjustments.push(AdjustmentSpec {
            cell_id: f.cell_id,
            delta_power_db: -6.0,
            delta_cio_db: 0.0,
            apply_index: TRAIN_END,
        });
        let truth = synthesize_cells(&cfg, &[f.cell_id]).unwrap().frames.remove(0);
        let theta = cfg.theta_deg(f.cell_id).unwrap();
        let adj = predict_adjusted(gt, &truth, TRAIN_END, delta, theta).unwrap();
        let free = predict_free(gt, &truth, TRAIN_END).unwrap();
        let (mut ca, mut cf, mut cn) = (0.0, 0.0, 0usize);
        for r in 0..o {
            for m in Cluster::Workload.columns() {
                if let Some(x) = truth.get(TRAIN_END + r, m) {
                    ca += (x - adj.frame.value(r, m)).powi(2);
                    cf += (x - free.frame.value(r, m)).powi(2);
                    cn += 1;
                }
            }
        }
        d.push(format!(
            "cell {}: workload RMSE adjusted {:.3} vs free {:.3}",
            f.cell_id,
            (ca / cn as f64).sqrt(),
            (cf / cn as f64).sqrt()
        ));
        sse_adj += ca;
        sse_free += cf;
        n += cn;
        for r in workload_ratio(&adj, &free) {
            worst_ratio = worst_ratio.max((r - adj.alpha_applied).abs());
        }
        ok &= adj.alpha_applied == area_multiplier(delta.beta().unwrap(), theta.to_radians()).unwrap();
    }
    let (ra, rf) = ((sse_adj / n as f64).sqrt(), (sse_free / n as f64).sqrt());
    let reduction = 1.0 - ra / rf;
    ok &= reduction >= 0.2 && worst_ratio <= 1e-12;
    d.push(format!("pooled workload RMSE adjusted {ra:.3} vs free {rf:.3}: reduction {:.1}% (need 20%)", 100.0 * reduction));
    d.push(format!("scaled adjusted/free ratio: worst |ratio - alpha| = {worst_ratio:.2e} (limit 1e-12)"));
    ok
}

fn metrics(d: &mut Vec<String>) -> bool {
    let mut ok = true;
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let r = rmse(&[3.0, 4.0], &[0.0, 0.0], &[true, true]).unwrap().value.unwrap();
    ok &= near(r, 12.5f64.sqrt());
    let s1 = smape(&[1.0], &[0.0], &[true]).unwrap().value.unwrap();
    ok &= near(s1, 2.0);
    let s2 = smape(&[100.0], &[50.0], &[true]).unwrap().value.unwrap();
    ok &= near(s2, 50.0 / 75.0);
    let m = masked_mse(
        &ndarray::array![[1.0, 2.0]],
        &ndarray::array![[0.0, 0.0]],
        &ndarray::array![[1.0, 1.0]],
    )
    .unwrap()
    .value;
    ok &= near(m, 2.5);
    let masked = rmse(&[3.0, 4.0, 1e300], &[0.0, 0.0, -1e300], &[true, true, false]).unwrap().value.unwrap();
    ok &= near(masked, r);
    d.push(format!("rmse [3,4] vs [0,0] = {r:?}; smape 1 vs 0 = {s1:?}; smape 100 vs 50 = {s2:?}; masked_mse [1,2] vs [0,0] = {m:?}"));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out_of_range = 0;
    for i in 0..100_000 {
        let scale = 10f64.powf(rng.random_range(-6.0..6.0));
        let draw = |rng: &mut ChaCha8Rng| match rng.random_range(0..10) {
            0 => 0.0,
            _ => rng.random_range(-1.0..1.0) * scale,
        };
        let (x, p) = (draw(&mut rng), draw(&mut rng));
        let v = if i % 2 == 0 {
            smape_term(x, p)
        } else {
            smape(&[x], &[p], &[true]).unwrap().value.unwrap()
        };
        if !(0.0..=2.0).contains(&v) {
            out_of_range += 1;
        }
    }
    ok &= out_of_range == 0;
    d.push(format!("sMAPE over 1e5 fuzzed pairs: {out_of_range} outside [0, 2]"));
    ok
}

fn cli(args: &[&str]) -> String {
    use clap::Parser;
    let parsed = Cli::try_parse_from(std::iter::once("celladj").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(parsed, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn interface(d: &mut Vec<String>, trained: &Trained) -> bool {
    let mut ok = true;
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sanity.toml");
    std::fs::write(&config, ScenarioConfig::sanity().to_toml_string()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cli(&["simulate", "--config", path(&config), "--out", path(&a)]);
    cli(&["simulate", "--config", path(&config), "--out", path(&b)]);
    let (ca, cb) = (checksums(&a).unwrap(), checksums(&b).unwrap());
    let reruns = ca == cb && std::fs::read(a.join(SCENARIO_FILE)).unwrap() == std::fs::read(b.join(SCENARIO_FILE)).unwrap();
    ok &= reruns;
    d.push(format!("simulate twice: {} files, identical checksums: {reruns}", ca.len()));

    let parsed = read_dataset(&a).unwrap();
    let same_frames = parsed.len() == trained.data.len() && parsed.iter().zip(&trained.data).all(|(p, f)| p.frame == *f);
    let c = dir.path().join("c");
    std::fs::create_dir_all(&c).unwrap();
    for p in &parsed {
        write_frame_file(&p.frame, &p.annotations, &c.join(format!("cell_{:03}.csv", p.frame.cell_id))).unwrap();
    }
    let lossless = same_frames && checksums(&c).unwrap() == ca;
    ok &= lossless;
    d.push(format!("CSV read/write round trip: frames equal to the simulator output and checksums unchanged: {lossless}"));

    let state = Arc::new(ServiceState::new(trained.gt.clone(), ScenarioConfig::sanity()).unwrap());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_celladj");
    let mut agree = 0;
    let cases = [(-6.0, 0.0), (-3.0, 0.0), (3.0, 0.0), (6.0, 0.0), (-2.0, 1.5), (0.0, 0.0)];
    for (p, o) in cases {
        let out = Command::new(bin)
            .args(["alpha", "--delta-db", &p.to_string(), "--delta-cio-db", &o.to_string()])
            .output()
            .unwrap();
        let text = String::from_utf8(out.stdout).unwrap();
        let cli_alpha: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("alpha="))
            .unwrap()
            .parse()
            .unwrap();
        let body = serde_json::json!({ "cell_id": 0, "t": TRAIN_END, "delta_db": p, "delta_cio_db": o }).to_string();
        let resp = rt.block_on(async {
            let r = router(state.clone())
                .oneshot(
                    Request::post("/whatif")
                        .header("content-type", "application/json")
                        .body(Body::from(body))
                        .unwrap(),
                )
                .await
                .unwrap();
            let status = r.status();
            (status, r.into_body().collect().await.unwrap().to_bytes())
        });
        let v: serde_json::Value = serde_json::from_slice(&resp.1).unwrap();
        let service_alpha = v["alpha"].as_f64();
        if resp.0 == StatusCode::OK && service_alpha.map(f64::to_bits) == Some(cli_alpha.to_bits()) {
            agree += 1;
        } else {
            d.push(format!("delta {p}/{o}: cli {cli_alpha:?} service {service_alpha:?} status {}", resp.0));
        }
    }
    ok &= agree == cases.len();
    d.push(format!("alpha command vs /whatif: {agree} of {} adjustments bit-identical", cases.len()));
    ok
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() {
        // Name filters from `cargo test <name>` select none of this suite.
        return;
    }
    println!("acceptance suite");
    let mut verdicts = vec![
        check("geometry oracle suite", geometry_oracle),
        check("multiplier identities", identities),
        check("apollonius residuals", apollonius),
        check("mw-voronoi suite", mw_voronoi),
        check("simulator multiplier law", simulator_law),
    ];
    let mut trained = None;
    verdicts.push(check("forecaster numerics", |d| forecaster(d, &mut trained)));
    let trained = trained.expect("forecaster check trains the model");
    verdicts.push(check("end-to-end directional check", |d| end_to_end(d, &trained)));
    verdicts.push(check("metrics", metrics));
    verdicts.push(check("interface", |d| interface(d, &trained)));

    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.name).collect();
    let unexpected: Vec<&&str> = failed.iter().filter(|n| !EXPECTED_FAILURES.contains(n)).collect();
    println!(
        "acceptance: {} passed, {} failed ({} expected)",
        verdicts.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len()
    );
    for n in EXPECTED_FAILURES {
        if !failed.contains(n) {
            println!("note: expected failure {n:?} passed");
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
