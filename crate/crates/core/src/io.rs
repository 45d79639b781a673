//! Sample, path and statistics files.
//!
//! Floats are written in Rust's shortest round-trip form, so re-reading a
//! file reproduces the recorded values bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ChainStats;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const STATS_FILE: &str = "stats.json";
pub const PATHS_FILE: &str = "paths.bin";
pub const PATHS_META_FILE: &str = "paths.json";
pub const TRACE_FILE: &str = "trace.csv";

/// One row of `samples.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub chain: usize,
    pub step: usize,
    pub value: f64,
    pub summaries: Vec<f64>,
}

/// A parsed `samples.csv`: summary column names and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub columns: Vec<String>,
    pub rows: Vec<SampleRecord>,
}

impl SampleTable {
    /// Values of a named column; `F_value` is accepted as well.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if name == "F_value" {
            return Ok(self.rows.iter().map(|r| r.value).collect());
        }
        let idx = self.columns.iter().position(|c| c == name).ok_or_else(|| {
            Error::invalid(format!(
                "no column {name:?}; have F_value, {}",
                self.columns.join(", ")
            ))
        })?;
        Ok(self.rows.iter().map(|r| r.summaries[idx]).collect())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("malformed CSV: {other:?}")),
    }
}

pub fn write_samples(path: &Path, table: &SampleTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec![
        "chain".to_string(),
        "step".to_string(),
        "F_value".to_string(),
    ];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for r in &table.rows {
        if r.summaries.len() != table.columns.len() {
            return Err(Error::invalid("sample row width does not match the header"));
        }
        let mut fields = vec![r.chain.to_string(), r.step.to_string(), r.value.to_string()];
        fields.extend(r.summaries.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("line {line}: bad {what} {s:?}")))
}

pub fn read_samples(path: &Path) -> Result<SampleTable> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header = r.headers().map_err(csv_error)?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "step" || &header[2] != "F_value"
    {
        return Err(Error::invalid(format!(
            "{} does not start with chain,step,F_value",
            path.display()
        )));
    }
    let columns: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        let summaries = rec
            .iter()
            .skip(3)
            .map(|s| parse_field(s, "value", line))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(SampleRecord {
            chain: parse_field(&rec[0], "chain", line)?,
            step: parse_field(&rec[1], "step", line)?,
            value: parse_field(&rec[2], "F_value", line)?,
            summaries,
        });
    }
    Ok(SampleTable { columns, rows })
}

/// Shape of `paths.bin`: `count` paths of `N_t + 1` rows of `n` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathsMeta {
    #[serde(rename = "N_t")]
    pub steps: usize,
    pub n: usize,
    pub count: usize,
}

impl PathsMeta {
    pub fn path_len(&self) -> usize {
        (self.steps + 1) * self.n
    }
}

/// Write concatenated paths as little-endian f64 plus the JSON sidecar.
pub fn write_paths(dir: &Path, meta: PathsMeta, values: &[f64]) -> Result<()> {
    write_paths_as(dir, "paths", meta, values)
}

/// [`write_paths`] to `<stem>.bin` and `<stem>.json`.
pub fn write_paths_as(dir: &Path, stem: &str, meta: PathsMeta, values: &[f64]) -> Result<()> {
    if values.len() != meta.count * meta.path_len() {
        return Err(Error::invalid(
            "path buffer does not match the declared shape",
        ));
    }
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let meta_text =
        serde_json::to_string_pretty(&meta).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), meta_text)?;
    Ok(())
}

pub fn read_paths(dir: &Path) -> Result<(PathsMeta, Vec<f64>)> {
    read_paths_as(dir, "paths")
}

pub fn read_paths_as(dir: &Path, stem: &str) -> Result<(PathsMeta, Vec<f64>)> {
    let meta: PathsMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)
            .map_err(|e| Error::invalid(format!("bad {stem}.json: {e}")))?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(dir.join(format!("{stem}.bin")))?).read_to_end(&mut bytes)?;
    if bytes.len() != 8 * meta.count * meta.path_len() {
        return Err(Error::invalid(format!(
            "{stem}.bin holds {} bytes, expected {}",
            bytes.len(),
            8 * meta.count * meta.path_len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    Ok((meta, values))
}

/// `trace.csv`: `chain,step,x_0..x_N` per retained sample.
pub fn write_trace(path: &Path, steps: usize, rows: &[(usize, usize, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["chain".to_string(), "step".to_string()];
    header.extend((0..=steps).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for (chain, step, xs) in rows {
        let mut fields = vec![chain.to_string(), step.to_string()];
        fields.extend(xs.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `trace.csv` back into `(chain, step, values)` rows.
pub fn read_trace(path: &Path) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header = r.headers().map_err(csv_error)?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "step" {
        return Err(Error::invalid(format!(
            "{} does not start with chain,step",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        let xs = rec
            .iter()
            .skip(2)
            .map(|s| parse_field(s, "value", line))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((
            parse_field(&rec[0], "chain", line)?,
            parse_field(&rec[1], "step", line)?,
            xs,
        ));
    }
    Ok(rows)
}

/// Contents of `stats.json`. Rejection fields are counts over all chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub acceptance_rate: f64,
    pub reject_newton: usize,
    pub reject_reversibility: usize,
    pub reject_mh: usize,
    pub blow_up: usize,
    pub mean_newton_iters: f64,
    pub wall_seconds: f64,
    pub seed: u64,
    pub steps: usize,
    pub accepted: usize,
    pub chains: usize,
    pub retained: usize,
    /// Tangent step after tuning, if tuning ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned_step: Option<f64>,
}

impl StatsFile {
    pub fn from_stats(
        stats: &ChainStats,
        chains: usize,
        retained: usize,
        tuned_step: Option<f64>,
    ) -> Self {
        Self {
            acceptance_rate: stats.acceptance_rate(),
            reject_newton: stats.reject_newton,
            reject_reversibility: stats.reject_reversibility,
            reject_mh: stats.reject_mh,
            blow_up: stats.blow_up,
            mean_newton_iters: stats.mean_newton_iters(),
            wall_seconds: stats.wall_seconds,
            seed: stats.seed,
            steps: stats.steps,
            accepted: stats.accepted,
            chains,
            retained,
            tuned_step,
        }
    }
}

pub fn write_stats(path: &Path, stats: &StatsFile) -> Result<()> {
    let text = serde_json::to_string_pretty(stats).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<StatsFile> {
    serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::invalid(format!("bad stats file: {e}")))
}
