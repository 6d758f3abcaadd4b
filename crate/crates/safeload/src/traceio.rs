//! Trace files: one CSV row per query, header
//! `query_id,arrival_ms,cluster_id,label,cpu_time_s,f0,...,f{D-1}`.
//!
//! Floats are written in shortest round-trip form, so write → read → write
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use safeload_core::{FeatureVector, Label, QueryRecord};

const FIXED: [&str; 5] = [
    "query_id",
    "arrival_ms",
    "cluster_id",
    "label",
    "cpu_time_s",
];

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}, column {col}: {detail}")]
    Parse {
        line: usize,
        col: usize,
        detail: String,
    },
    #[error("line {line}: record ({arrival_ms}, {query_id}) sorts before the previous row")]
    Order {
        line: usize,
        arrival_ms: u64,
        query_id: String,
    },
    #[error("line {line}: {found} features, header declares {expected}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
}

fn parse_err(line: usize, col: usize, detail: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        col,
        detail: detail.into(),
    }
}

/// Parses a finite float; `NaN`, `inf` and friends are rejected.
pub fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_header(header: &str) -> Result<usize, TraceError> {
    let cols: Vec<&str> = header.split(',').collect();
    for (i, want) in FIXED.iter().enumerate() {
        if cols.get(i) != Some(want) {
            return Err(parse_err(
                1,
                i + 1,
                format!("expected header column {want:?}"),
            ));
        }
    }
    for (k, col) in cols[FIXED.len()..].iter().enumerate() {
        if *col != format!("f{k}") {
            return Err(parse_err(
                1,
                FIXED.len() + k + 1,
                format!("expected header column \"f{k}\""),
            ));
        }
    }
    if cols.len() == FIXED.len() {
        return Err(parse_err(1, cols.len(), "header declares no features"));
    }
    Ok(cols.len() - FIXED.len())
}

fn parse_row(text: &str, line: usize, dimension: usize) -> Result<QueryRecord, TraceError> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() < FIXED.len() {
        return Err(parse_err(line, fields.len(), "truncated row"));
    }
    let found = fields.len() - FIXED.len();
    if found != dimension {
        return Err(TraceError::Dimension {
            line,
            expected: dimension,
            found,
        });
    }
    let arrival_ms: u64 = fields[1]
        .parse()
        .map_err(|_| parse_err(line, 2, format!("bad arrival_ms {:?}", fields[1])))?;
    let label = match fields[3] {
        "1" => Label::Mo,
        "0" => Label::NonMo,
        other => return Err(parse_err(line, 4, format!("bad label {other:?}"))),
    };
    let cpu_time_s = parse_finite(fields[4])
        .filter(|&c| c >= 0.0)
        .ok_or_else(|| parse_err(line, 5, format!("bad cpu_time_s {:?}", fields[4])))?;
    let mut values = Vec::with_capacity(dimension);
    for (k, f) in fields[FIXED.len()..].iter().enumerate() {
        let col = FIXED.len() + k + 1;
        values.push(
            parse_finite(f).ok_or_else(|| parse_err(line, col, format!("bad feature {f:?}")))?,
        );
    }
    let features = FeatureVector::new(values).map_err(|e| parse_err(line, 6, e.to_string()))?;
    QueryRecord::new(
        fields[0], arrival_ms, fields[2], features, cpu_time_s, label,
    )
    .map_err(|e| {
        let col = if safeload_core::types::validate_id(fields[0]).is_err() {
            1
        } else {
            3
        };
        parse_err(line, col, e.to_string())
    })
}

/// Parses trace text; rows must follow `(arrival_ms, query_id)` order.
pub fn parse_trace(text: &str) -> Result<Vec<QueryRecord>, TraceError> {
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let dimension = parse_header(header)?;
    let mut records: Vec<QueryRecord> = Vec::new();
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        if row.is_empty() {
            continue;
        }
        let record = parse_row(row, line, dimension)?;
        if let Some(prev) = records.last() {
            if record.order_key() < prev.order_key() {
                return Err(TraceError::Order {
                    line,
                    arrival_ms: record.arrival_ms,
                    query_id: record.query_id,
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>, TraceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(&text)
}

/// Canonical text of a trace. `dimension` is used for the header of an
/// empty trace; otherwise it comes from the first record.
pub fn render_trace(records: &[QueryRecord], dimension: usize) -> String {
    let dimension = records.first().map_or(dimension, |r| r.features.len());
    let mut out = String::with_capacity(64 + records.len() * (dimension * 8 + 48));
    out.push_str(&FIXED.join(","));
    for k in 0..dimension {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for r in records {
        let label = if r.label.is_positive() { 1 } else { 0 };
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.query_id, r.arrival_ms, r.cluster_id, label, r.cpu_time_s
        );
        for v in r.features.as_slice() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_trace(
    records: &[QueryRecord],
    dimension: usize,
    path: impl AsRef<Path>,
) -> Result<(), TraceError> {
    let path = path.as_ref();
    let io_err = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(render_trace(records, dimension).as_bytes())
        .map_err(io_err)?;
    w.flush().map_err(io_err)
}
