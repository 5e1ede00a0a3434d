//! The `celladj` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use celladj_core::simulator::{synthesize, ScenarioConfig};
use celladj_core::AdjustmentDelta;
use celladj_forecast::train::{TrainConfig, WindowSet};
use celladj_forecast::pipeline::DEFAULT_THETA_DEG;
use celladj_forecast::{fine_tune, persist, predict_adjusted, pretrain, GraphicalModel, GraphicalTransformer, ModelConfig, Scaler};

use crate::csvio::{self, frame_file_name, read_dataset, write_frame, write_frame_file};
use crate::error::{data, usage, Error, Result};
use crate::report::alpha_report;

/// Scenario file written next to a simulated dataset.
pub const SCENARIO_FILE: &str = "scenario.toml";

#[derive(Debug, Parser)]
#[command(name = "celladj", version, about = "Predict how power and CIO adjustments change cell metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Offset-power ratio and area multiplier of an adjustment.
    Alpha(AlphaArgs),
    /// Synthesize a scenario and write one CSV per exported cell.
    Simulate(SimulateArgs),
    /// Pre-train the per-cluster forecasters on a dataset.
    Pretrain(PretrainArgs),
    /// Forecast one cell under an adjustment.
    Predict(PredictArgs),
    /// Score forecast CSVs against truth CSVs.
    Evaluate(EvaluateArgs),
    /// Fine-tune a model on windows starting at recorded adjustments.
    Finetune(FinetuneArgs),
    /// Serve the what-if JSON endpoints.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct AlphaArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub delta_db: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta_cio_db: f64,
    #[arg(long, default_value_t = 60.0)]
    pub theta_deg: f64,
    /// Also estimate alpha by Monte Carlo with this many samples.
    #[arg(long)]
    pub mc_samples: Option<u64>,
    /// Print JSON instead of key=value lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Rows between consecutive window starts.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Train on rows before this index only (default: all rows).
    #[arg(long)]
    pub train_end: Option<usize>,
    #[arg(long, default_value_t = 96)]
    pub input_len: usize,
    #[arg(long, default_value_t = 96)]
    pub output_len: usize,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    /// Loss trace CSV (default: `<out>.trace.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cell: u32,
    #[arg(long)]
    pub t: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta_db: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta_cio_db: f64,
    /// Sector angle; defaults to the cell's configured angle, else 60.
    #[arg(long)]
    pub theta_deg: Option<f64>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Print CSV instead of an aligned table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Alpha(a) => alpha(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Pretrain(a) => pretrain_cmd(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Finetune(a) => finetune(a, out),
        Command::Serve(a) => serve(a, out),
    }
}

fn alpha(a: AlphaArgs, out: &mut dyn Write) -> Result<()> {
    if a.mc_samples == Some(0) {
        return Err(usage("--mc-samples must be positive"));
    }
    let r = alpha_report(a.delta_db, a.delta_cio_db, a.theta_deg, a.mc_samples)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string(&r).map_err(|e| data(e.to_string()))?)?;
    } else {
        write!(out, "{}", r.to_text())?;
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_toml_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(&a.config)?;
    let ds = synthesize(&config)?;
    std::fs::create_dir_all(&a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    for f in &ds.frames {
        write_frame_file(f, &[], &a.out.join(frame_file_name(f.cell_id)))?;
    }
    std::fs::write(a.out.join(SCENARIO_FILE), config.to_toml_string())?;
    writeln!(out, "wrote {} cell files to {}", ds.frames.len(), a.out.display())?;
    Ok(())
}

/// Configured sector angle of `cell` from the dataset's scenario file.
fn theta_for(dir: &Path, cell: u32) -> Result<f64> {
    let path = dir.join(SCENARIO_FILE);
    if !path.exists() {
        return Ok(DEFAULT_THETA_DEG);
    }
    Ok(load_config(&path)?.theta_deg(cell).unwrap_or(DEFAULT_THETA_DEG))
}

fn pretrain_cmd(a: PretrainArgs, out: &mut dyn Write) -> Result<()> {
    if a.stride == 0 {
        return Err(usage("--stride must be positive"));
    }
    let frames: Vec<_> = read_dataset(&a.data)?.into_iter().map(|p| p.frame).collect();
    let refs: Vec<_> = frames.iter().collect();
    let end = a.train_end.unwrap_or(usize::MAX);
    let scaler = Scaler::fit(&refs, a.train_end)?;
    let mc = ModelConfig {
        d_model: a.d_model,
        input_len: a.input_len,
        output_len: a.output_len,
        mask_ratio: a.mask_ratio.unwrap_or(ModelConfig::default().mask_ratio),
        ..ModelConfig::default()
    };
    let mut gt = GraphicalTransformer::new(GraphicalModel::standard(), scaler, mc, a.seed)?;
    let set = WindowSet::adjustment_free(&gt, &frames, 0..end, a.stride)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let report = pretrain(&mut gt, &set, &tc)?;
    persist::save(&gt, &a.out)?;
    let trace = a.trace.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    let f = std::fs::File::create(&trace).map_err(|e| data(format!("{}: {e}", trace.display())))?;
    report.write_trace_csv(std::io::BufWriter::new(f))?;
    writeln!(
        out,
        "windows={} steps={} initial_loss={:?} final_loss={:?}\nmodel={}\ntrace={}",
        report.windows,
        report.trace.len(),
        report.initial_loss,
        report.final_loss,
        a.out.display(),
        trace.display()
    )?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GraphicalTransformer> {
    persist::load(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let gt = load_model(&a.model)?;
    let frames = read_dataset(&a.data)?;
    let frame = &frames
        .iter()
        .find(|p| p.frame.cell_id == a.cell)
        .ok_or_else(|| data(format!("cell {} not found in {}", a.cell, a.data.display())))?
        .frame;
    let theta = match a.theta_deg {
        Some(t) => t,
        None => theta_for(&a.data, a.cell)?,
    };
    let adj = AdjustmentDelta::new(a.delta_db, a.delta_cio_db)?;
    let f = predict_adjusted(&gt, frame, a.t, adj, theta)?;
    let annotations = vec![
        ("forecast_t".to_string(), f.t.to_string()),
        ("adj_delta_power_db".to_string(), format!("{:?}", adj.delta_power_db)),
        ("adj_delta_cio_db".to_string(), format!("{:?}", adj.delta_cio_db)),
        ("beta".to_string(), format!("{:?}", f.beta)),
        ("alpha".to_string(), format!("{:?}", f.alpha_applied)),
        ("theta_deg".to_string(), format!("{:?}", f.theta_deg)),
    ];
    match a.out {
        Some(p) => write_frame_file(&f.frame, &annotations, &p)?,
        None => write_frame(&f.frame, &annotations, out)?,
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let truth = read_dataset(&a.truth)?;
    let preds = read_dataset(&a.pred)?;
    let mut cases = Vec::new();
    for p in &preds {
        let t = truth
            .iter()
            .find(|t| t.frame.cell_id == p.frame.cell_id)
            .ok_or_else(|| data(format!("no truth file for cell {}", p.frame.cell_id)))?;
        let first = p.frame.timestamps[0];
        let start = t
            .frame
            .timestamps
            .iter()
            .position(|&ts| ts == first)
            .ok_or_else(|| data(format!("cell {}: forecast start {first} is outside the truth", p.frame.cell_id)))?;
        if start + p.frame.len() > t.frame.len() {
            return Err(data(format!("cell {}: forecast runs past the end of the truth", p.frame.cell_id)));
        }
        let sliced = crate::service::slice(&t.frame, start, p.frame.len());
        cases.push(celladj_core::evalmetrics::CaseScores::from_frames(&sliced, &p.frame, 0..p.frame.len())?);
    }
    let table = celladj_core::evalmetrics::evaluate_cases("prediction", &cases)?;
    if a.csv {
        write!(out, "{}", table.to_csv())?;
    } else {
        write!(out, "{}", table.to_text())?;
    }
    Ok(())
}

fn finetune(a: FinetuneArgs, out: &mut dyn Write) -> Result<()> {
    let mut gt = load_model(&a.model)?;
    let frames: Vec<_> = read_dataset(&a.data)?.into_iter().map(|p| p.frame).collect();
    let scenario = a.data.join(SCENARIO_FILE);
    let cfg = if scenario.exists() { Some(load_config(&scenario)?) } else { None };
    let set = WindowSet::adjusted(&gt, &frames, |cell| {
        cfg.as_ref().and_then(|c| c.theta_deg(cell)).unwrap_or(DEFAULT_THETA_DEG)
    })?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let report = fine_tune(&mut gt, &set, &tc)?;
    persist::save(&gt, &a.out)?;
    writeln!(
        out,
        "windows={} steps={} initial_loss={:?} final_loss={:?}\nmodel={}",
        report.windows,
        report.trace.len(),
        report.initial_loss,
        report.final_loss,
        a.out.display()
    )?;
    Ok(())
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let gt = load_model(&a.model)?;
    let config = load_config(&a.scenario)?;
    let state = std::sync::Arc::new(crate::service::ServiceState::new(gt, config)?);
    writeln!(out, "listening on http://127.0.0.1:{}", a.port)?;
    out.flush()?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Data(e.to_string()))?;
    rt.block_on(crate::service::serve(state, a.port))
        .map_err(|e| data(format!("port {}: {e}", a.port)))
}

/// Checksums of a written dataset directory, for reproducibility checks.
pub fn checksums(dir: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    csvio::dataset_checksums(dir)
}
