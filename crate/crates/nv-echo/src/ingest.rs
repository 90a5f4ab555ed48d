//! Text formats: decay traces, sample tables, and fit-result records.
//!
//! Trace grammar:
//!
//! ```text
//! # sample_id = No. 3        <- '#' lines are `key = value` metadata
//! tau_us,signal,sigma        <- optional column header as first data row
//! 0.1,0.98,0.01              <- comma- or whitespace-separated rows
//! 0.2 0.95 0.01
//! ```
//!
//! A missing per-row sigma is written as `-`. Numbers are locale
//! independent: decimal point only, scientific notation accepted.
//!
//! Sample tables are CSV with a header row naming the required columns
//! `id,p1_conc,nv_conc,dose` (concentrations in 10¹⁷ cm⁻³, dose in
//! 10¹⁶ e·cm⁻²).
//!
//! Fit results are line-delimited JSON records with a `schema_version`
//! field, append-friendly for batch runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{DecayTrace, FitResult, TracePoint};
use crate::models::SampleRecord;

/// Current fit-result record schema.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// A decay trace plus its header metadata. Unknown header keys are
/// preserved on round trip; the `sample_id` key also populates the
/// trace's sample link.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub metadata: BTreeMap<String, String>,
    pub trace: DecayTrace,
}

impl TraceFile {
    pub fn from_trace(trace: DecayTrace) -> Self {
        let mut metadata = BTreeMap::new();
        if let Some(id) = &trace.sample_id {
            metadata.insert("sample_id".to_string(), id.clone());
        }
        Self { metadata, trace }
    }
}

/// Parsed sample table (Table-1-style metadata).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub records: Vec<SampleRecord>,
}

impl SampleTable {
    pub fn find(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

fn parse_cell(cell: &str, line: usize, what: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("non-numeric {what} '{}'", cell.trim())))
}

/// Parse a decay trace file. Errors carry 1-based line numbers.
pub fn parse_trace(text: &str) -> Result<TraceFile> {
    let mut metadata = BTreeMap::new();
    let mut points: Vec<TracePoint> = Vec::new();
    let mut saw_data = false;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once('=') {
                metadata.insert(key.trim().to_string(), value.trim().to_string());
            }
            continue;
        }

        let cells: Vec<&str> = line.split(',').flat_map(str::split_whitespace).collect();
        if !(2..=3).contains(&cells.len()) {
            return Err(Error::parse(lineno, format!("expected 2 or 3 columns, got {}", cells.len())));
        }
        if !saw_data && cells[0].trim().parse::<f64>().is_err() {
            // Optional column-header row.
            saw_data = true;
            continue;
        }
        saw_data = true;

        let tau = parse_cell(cells[0], lineno, "tau")?;
        let signal = parse_cell(cells[1], lineno, "signal")?;
        let sigma = match cells.get(2).map(|c| c.trim()) {
            None | Some("-") => None,
            Some(c) => {
                let s = parse_cell(c, lineno, "sigma")?;
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::parse(lineno, format!("sigma must be > 0, got {s}")));
                }
                Some(s)
            }
        };
        if !tau.is_finite() || !signal.is_finite() {
            return Err(Error::parse(lineno, "non-finite value".to_string()));
        }
        if let Some(prev) = points.last() {
            if tau <= prev.tau {
                return Err(Error::parse(
                    lineno,
                    format!("tau not strictly increasing: {tau} after {}", prev.tau),
                ));
            }
        }
        points.push(TracePoint { tau, signal, sigma });
    }

    if points.is_empty() {
        return Err(Error::data("trace file contains no data rows".to_string()));
    }
    let sample_id = metadata.get("sample_id").cloned();
    let trace = DecayTrace::new(points, sample_id)?;
    Ok(TraceFile { metadata, trace })
}

/// Serialize a trace file; metadata keys are emitted in sorted order so
/// parse∘write is the identity up to header normalization.
pub fn write_trace(file: &TraceFile) -> String {
    let mut out = String::new();
    let mut metadata = file.metadata.clone();
    if let Some(id) = &file.trace.sample_id {
        metadata.entry("sample_id".to_string()).or_insert_with(|| id.clone());
    }
    for (key, value) in &metadata {
        out.push_str(&format!("# {key} = {value}\n"));
    }
    let any_sigma = file.trace.points.iter().any(|p| p.sigma.is_some());
    out.push_str(if any_sigma { "tau_us,signal,sigma\n" } else { "tau_us,signal\n" });
    for p in &file.trace.points {
        if any_sigma {
            match p.sigma {
                Some(s) => out.push_str(&format!("{},{},{}\n", p.tau, p.signal, s)),
                None => out.push_str(&format!("{},{},-\n", p.tau, p.signal)),
            }
        } else {
            out.push_str(&format!("{},{}\n", p.tau, p.signal));
        }
    }
    out
}

/// Parse a sample table. The header row must name `id`, `p1_conc`,
/// `nv_conc`, and `dose`.
pub fn parse_samples(text: &str) -> Result<SampleTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) =
        lines.next().ok_or_else(|| Error::data("sample table is empty".to_string()))?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_lowercase()).collect();
    let index = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::parse(header_line, format!("missing required column '{name}'")))
    };
    let (id_col, p1_col, nv_col, dose_col) =
        (index("id")?, index("p1_conc")?, index("nv_conc")?, index("dose")?);

    let mut records: Vec<SampleRecord> = Vec::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::parse(
                lineno,
                format!("expected {} columns, got {}", columns.len(), cells.len()),
            ));
        }
        let id = cells[id_col].to_string();
        if records.iter().any(|r| r.id == id) {
            return Err(Error::parse(lineno, format!("duplicate sample id '{id}'")));
        }
        let p1 = parse_cell(cells[p1_col], lineno, "p1_conc")?;
        let nv = parse_cell(cells[nv_col], lineno, "nv_conc")?;
        let dose = parse_cell(cells[dose_col], lineno, "dose")?;
        records
            .push(SampleRecord::new(id, p1, nv, dose).map_err(|e| Error::parse(lineno, e.to_string()))?);
    }
    if records.is_empty() {
        return Err(Error::data("sample table has no data rows".to_string()));
    }
    Ok(SampleTable { records })
}

/// Serialize a sample table with the canonical header.
pub fn write_samples(table: &SampleTable) -> String {
    let mut out = String::from("id,p1_conc,nv_conc,dose\n");
    for r in &table.records {
        out.push_str(&format!("{},{},{},{}\n", r.id, r.p1_conc, r.nv_conc, r.dose));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultRecord {
    schema_version: u32,
    #[serde(flatten)]
    fit: FitResult,
}

/// Serialize fit results as line-delimited JSON records.
pub fn write_results(results: &[FitResult]) -> String {
    let mut out = String::new();
    for fit in results {
        let record = ResultRecord { schema_version: RESULTS_SCHEMA_VERSION, fit: fit.clone() };
        out.push_str(&serde_json::to_string(&record).expect("fit results are always serializable"));
        out.push('\n');
    }
    out
}

/// Parse line-delimited fit-result records, rejecting unknown schema
/// versions.
pub fn read_results(text: &str) -> Result<Vec<FitResult>> {
    let mut results = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse(lineno, "missing schema_version".to_string()))?;
        if version != RESULTS_SCHEMA_VERSION as u64 {
            return Err(Error::data(format!(
                "unsupported results schema version {version} (expected {RESULTS_SCHEMA_VERSION})"
            )));
        }
        let record: ResultRecord =
            serde_json::from_value(value).map_err(|e| Error::parse(lineno, e.to_string()))?;
        results.push(record.fit);
    }
    Ok(results)
}
