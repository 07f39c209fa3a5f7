//! Per-round trace records and their CSV encoding.
//!
//! Columns: `round,residual,dual_value,updates_performed,messages_dropped,`
//! followed by `mu_0..mu_{N-1}` and `d_0..d_{N-1}`. Reals are written in
//! scientific notation with 17 significant digits so they parse back to the
//! identical `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u64,
    pub residual: f64,
    /// Dual function value at the announced prices (observer metric).
    pub dual_value: f64,
    /// Prices announced this round.
    pub prices: Vec<f64>,
    pub demand: Vec<usize>,
    pub updates_performed: usize,
    pub messages_dropped: usize,
}

/// Sidecar metadata written next to a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub rng: String,
    pub version: String,
    pub config: serde_json::Value,
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn header(num_tones: usize) -> String {
    let mut cols = vec![
        "round".to_string(),
        "residual".into(),
        "dual_value".into(),
        "updates_performed".into(),
        "messages_dropped".into(),
    ];
    cols.extend((0..num_tones).map(|n| format!("mu_{n}")));
    cols.extend((0..num_tones).map(|n| format!("d_{n}")));
    cols.join(",")
}

pub fn write_trace<W: Write>(mut out: W, num_tones: usize, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(out, "{}", header(num_tones))?;
    for r in records {
        let mut line = format!(
            "{},{},{},{},{}",
            r.round,
            real(r.residual),
            real(r.dual_value),
            r.updates_performed,
            r.messages_dropped
        );
        for &mu in &r.prices {
            line.push(',');
            line.push_str(&real(mu));
        }
        for &d in &r.demand {
            line.push(',');
            line.push_str(&d.to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sidecar path: `<trace>.meta.json`.
pub fn meta_path(trace_path: &Path) -> PathBuf {
    let mut name = trace_path.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the CSV trace and its metadata sidecar.
pub fn write_trace_file(
    path: &Path,
    num_tones: usize,
    records: &[TraceRecord],
    meta: &TraceMeta,
) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_trace(BufWriter::new(file), num_tones, records).map_err(io_err(path))?;
    let mpath = meta_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, name: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("line {line}: bad or missing {name}")))
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut lines = input.lines();
    let head = match lines.next() {
        Some(h) => h.map_err(|e| Error::Parse(e.to_string()))?,
        None => return Err(Error::Parse("empty trace".into())),
    };
    let cols = head.split(',').count();
    if cols < 5 || (cols - 5) % 2 != 0 {
        return Err(Error::Parse(format!("unexpected header: {head}")));
    }
    let n = (cols - 5) / 2;
    if head != header(n) {
        return Err(Error::Parse(format!("unexpected header: {head}")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let ln = i + 2;
        let mut tok = line.split(',');
        let round = parse_field(tok.next(), ln, "round")?;
        let residual = parse_field(tok.next(), ln, "residual")?;
        let dual_value = parse_field(tok.next(), ln, "dual_value")?;
        let updates_performed = parse_field(tok.next(), ln, "updates_performed")?;
        let messages_dropped = parse_field(tok.next(), ln, "messages_dropped")?;
        let prices = (0..n)
            .map(|_| parse_field(tok.next(), ln, "mu"))
            .collect::<Result<Vec<f64>>>()?;
        let demand = (0..n)
            .map(|_| parse_field(tok.next(), ln, "d"))
            .collect::<Result<Vec<usize>>>()?;
        if tok.next().is_some() {
            return Err(Error::Parse(format!("line {ln}: too many columns")));
        }
        records.push(TraceRecord {
            round,
            residual,
            dual_value,
            prices,
            demand,
            updates_performed,
            messages_dropped,
        });
    }
    Ok(records)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_trace(BufReader::new(file))
}
