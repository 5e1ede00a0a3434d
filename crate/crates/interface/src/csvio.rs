//! Versioned per-cell dataset CSV.
//!
//! ```text
//! #schema=cell-dataset/1.0
//! #<key>=<value>            optional annotations
//! timestamp,cell_id,<17 metrics>,day_of_week,hour,minute,adj_delta_power_db,adj_delta_cio_db
//! ```
//!
//! Timestamps are RFC 3339 in UTC on the 15-minute grid. An empty metric
//! field is a missing point. The adjustment columns are set on rows where
//! an adjustment takes effect and empty elsewhere.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use sha2::{Digest, Sha256};

use celladj_core::frame::{AdjustmentMark, Metric, MetricFrame, TimeFeatures, INTERVAL_MINUTES, N_METRICS};
use celladj_core::AdjustmentDelta;

use crate::error::{data, Result};

pub const SCHEMA_NAME: &str = "cell-dataset";
pub const SCHEMA_MAJOR: u32 = 1;
pub const SCHEMA_MINOR: u32 = 0;

const TAIL_COLUMNS: [&str; 5] = ["day_of_week", "hour", "minute", "adj_delta_power_db", "adj_delta_cio_db"];

pub fn header() -> Vec<String> {
    let mut h = vec!["timestamp".to_string(), "cell_id".to_string()];
    h.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
    h.extend(TAIL_COLUMNS.iter().map(|s| s.to_string()));
    h
}

pub fn schema_line() -> String {
    format!("#schema={SCHEMA_NAME}/{SCHEMA_MAJOR}.{SCHEMA_MINOR}")
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes one frame with optional `#key=value` annotation lines.
pub fn write_frame(frame: &MetricFrame, annotations: &[(String, String)], mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", schema_line())?;
    for (k, v) in annotations {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(data(format!("annotation {k:?} cannot be encoded")));
        }
        writeln!(out, "#{k}={v}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header()).map_err(|e| data(e.to_string()))?;
    let mut marks: BTreeMap<usize, AdjustmentDelta> = BTreeMap::new();
    for m in &frame.adjustments {
        marks.insert(m.index, m.delta);
    }
    for r in 0..frame.len() {
        let tf = frame.time_features(r);
        let mut rec = Vec::with_capacity(N_METRICS + 7);
        rec.push(format_timestamp(frame.timestamps[r]));
        rec.push(frame.cell_id.to_string());
        for m in 0..N_METRICS {
            rec.push(frame.get(r, m).map(fmt_f64).unwrap_or_default());
        }
        rec.push(tf.day_of_week.to_string());
        rec.push(tf.hour.to_string());
        rec.push(tf.minute.to_string());
        match marks.get(&r) {
            Some(d) => {
                rec.push(fmt_f64(d.delta_power_db));
                rec.push(fmt_f64(d.delta_cio_db));
            }
            None => {
                rec.push(String::new());
                rec.push(String::new());
            }
        }
        w.write_record(&rec).map_err(|e| data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFrame {
    pub frame: MetricFrame,
    pub annotations: Vec<(String, String)>,
}

fn parse_schema(line: &str) -> Result<()> {
    let rest = line
        .strip_prefix("#schema=")
        .ok_or_else(|| data(format!("line 1: expected '#schema={SCHEMA_NAME}/<major>.<minor>', got {line:?}")))?;
    let (name, version) = rest
        .split_once('/')
        .ok_or_else(|| data(format!("line 1: malformed schema tag {rest:?}")))?;
    if name != SCHEMA_NAME {
        return Err(data(format!("line 1: unknown schema {name:?}, expected {SCHEMA_NAME:?}")));
    }
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| data(format!("line 1: malformed schema version {version:?}")))?;
    if major != SCHEMA_MAJOR {
        return Err(data(format!(
            "line 1: unsupported schema major version {major}, this reader handles {SCHEMA_MAJOR}.x"
        )));
    }
    Ok(())
}

fn parse_f64(s: &str, line: u64, col: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| data(format!("line {line}: column {col}: {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(data(format!("line {line}: column {col}: value must be finite, got {s}")));
    }
    Ok(v)
}

/// Reads one frame; every malformed row is reported with its file line.
pub fn read_frame(mut input: impl Read) -> Result<ParsedFrame> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or_else(|| data("empty file: missing schema line"))?;
    parse_schema(first.trim_end())?;
    let mut consumed = first.len();
    let mut line_no = 1u64;
    let mut annotations = Vec::new();
    for l in lines {
        if !l.starts_with('#') {
            break;
        }
        line_no += 1;
        let body = l.trim_end().trim_start_matches('#');
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| data(format!("line {line_no}: annotation must be '#key=value', got {body:?}")))?;
        annotations.push((k.to_string(), v.to_string()));
        consumed += l.len();
    }
    let offset = line_no;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(&text.as_bytes()[consumed..]);
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| data(format!("line {}: {e}", offset + 1)))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header() {
        return Err(data(format!(
            "line {}: header does not match the {SCHEMA_NAME} {SCHEMA_MAJOR}.{SCHEMA_MINOR} column list",
            offset + 1
        )));
    }
    let names = header();
    let mut stamps = Vec::new();
    let mut rows: Vec<[Option<f64>; N_METRICS]> = Vec::new();
    let mut marks = Vec::new();
    let mut cell_id: Option<u32> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line()) + offset;
            data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line()) + offset;
        let ts: DateTime<Utc> = DateTime::parse_from_rfc3339(&rec[0])
            .map_err(|e| data(format!("line {line}: timestamp {:?}: {e}", &rec[0])))?
            .with_timezone(&Utc);
        if let Some(&prev) = stamps.last() {
            let prev: DateTime<Utc> = prev;
            if ts <= prev {
                return Err(data(format!(
                    "line {line}: timestamp {} is not after the previous row's {}",
                    format_timestamp(ts),
                    format_timestamp(prev)
                )));
            }
            if ts - prev != chrono::Duration::minutes(INTERVAL_MINUTES) {
                return Err(data(format!(
                    "line {line}: timestamp {} is not {INTERVAL_MINUTES} minutes after {}",
                    format_timestamp(ts),
                    format_timestamp(prev)
                )));
            }
        }
        let id: u32 = rec[1]
            .parse()
            .map_err(|_| data(format!("line {line}: cell_id {:?} is not a non-negative integer", &rec[1])))?;
        match cell_id {
            None => cell_id = Some(id),
            Some(c) if c != id => {
                return Err(data(format!("line {line}: cell_id {id} differs from the file's cell {c}")));
            }
            _ => {}
        }
        let mut vals = [None; N_METRICS];
        for (m, v) in vals.iter_mut().enumerate() {
            let s = &rec[2 + m];
            if !s.is_empty() {
                *v = Some(parse_f64(s, line, &names[2 + m])?);
            }
        }
        let tf = TimeFeatures::of(ts);
        let base = 2 + N_METRICS;
        let expect = [tf.day_of_week, tf.hour, tf.minute];
        for (k, want) in expect.iter().enumerate() {
            let s = &rec[base + k];
            if s.parse::<u32>().ok() != Some(*want) {
                return Err(data(format!(
                    "line {line}: column {} is {s:?} but the timestamp gives {want}",
                    names[base + k]
                )));
            }
        }
        let (p, o) = (&rec[base + 3], &rec[base + 4]);
        match (p.is_empty(), o.is_empty()) {
            (true, true) => {}
            (false, false) => {
                let d = AdjustmentDelta::new(parse_f64(p, line, &names[base + 3])?, parse_f64(o, line, &names[base + 4])?)
                    .map_err(|e| data(format!("line {line}: {e}")))?;
                marks.push(AdjustmentMark {
                    index: stamps.len(),
                    delta: d,
                });
            }
            _ => {
                return Err(data(format!(
                    "line {line}: adj_delta_power_db and adj_delta_cio_db must both be set or both empty"
                )))
            }
        }
        stamps.push(ts);
        rows.push(vals);
    }
    let cell_id = cell_id.ok_or_else(|| data("file has a header but no rows"))?;
    let mut frame = MetricFrame::new(cell_id, stamps);
    for (r, vals) in rows.iter().enumerate() {
        for (m, v) in vals.iter().enumerate() {
            frame.set(r, m, *v);
        }
    }
    frame.adjustments = marks;
    Ok(ParsedFrame { frame, annotations })
}

pub fn frame_file_name(cell_id: u32) -> String {
    format!("cell_{cell_id:03}.csv")
}

pub fn write_frame_file(frame: &MetricFrame, annotations: &[(String, String)], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_frame(frame, annotations, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame_file(path: &Path) -> Result<ParsedFrame> {
    let f = std::fs::File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    read_frame(std::io::BufReader::new(f)).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// CSV files of a dataset directory, sorted by name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(data(format!("{}: no .csv files", dir.display())));
    }
    Ok(files)
}

/// Every frame in `dir`, sorted by cell id; duplicate cells are rejected.
pub fn read_dataset(dir: &Path) -> Result<Vec<ParsedFrame>> {
    let mut out: Vec<ParsedFrame> = dataset_files(dir)?
        .iter()
        .map(|p| read_frame_file(p))
        .collect::<Result<_>>()?;
    out.sort_by_key(|p| p.frame.cell_id);
    if let Some(w) = out.windows(2).find(|w| w[0].frame.cell_id == w[1].frame.cell_id) {
        return Err(data(format!("{}: cell {} appears in two files", dir.display(), w[0].frame.cell_id)));
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of every CSV in a directory, by file name.
pub fn dataset_checksums(dir: &Path) -> Result<BTreeMap<String, String>> {
    dataset_files(dir)?
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p)?;
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((name, sha256_hex(&bytes)))
        })
        .collect()
}
