//! CSV serialization of solver traces.
//!
//! The schema is fixed; floating-point fields carry 17 significant digits so
//! every `f64` round-trips exactly.

use std::io::{self, Write};

use thiserror::Error;

use super::TraceRecord;

pub const TRACE_HEADER: &str =
    "iter,sim_time,energy,grad_norm,orth_error,half_spec_min,half_spec_max,dt,inner_iters";

/// 17-significant-digit scientific form, enough to reproduce any `f64`
/// bit pattern on parse.
pub fn format_float_17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace_csv(out: &mut impl Write, trace: &[TraceRecord]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            format_float_17(r.sim_time),
            format_float_17(r.energy),
            format_float_17(r.grad_norm),
            format_float_17(r.orth_error),
            format_float_17(r.half_spec_min),
            format_float_17(r.half_spec_max),
            format_float_17(r.dt),
            r.inner_iters,
        )?;
    }
    Ok(())
}

pub fn trace_csv_string(trace: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, trace).expect("write to Vec cannot fail");
    String::from_utf8(buf).expect("trace CSV is ASCII")
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("line {line}: expected header `{TRACE_HEADER}`")]
    BadHeader { line: usize },
    #[error("line {line}: expected 9 fields, got {got}")]
    FieldCount { line: usize, got: usize },
    #[error("line {line}, field `{field}`: {source}")]
    BadNumber {
        line: usize,
        field: &'static str,
        source: std::num::ParseFloatError,
    },
    #[error("line {line}, field `{field}`: {source}")]
    BadInteger {
        line: usize,
        field: &'static str,
        source: std::num::ParseIntError,
    },
}

pub fn read_trace_csv(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TRACE_HEADER => {}
        _ => return Err(TraceParseError::BadHeader { line: 1 }),
    }
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 9 {
            return Err(TraceParseError::FieldCount {
                line,
                got: fields.len(),
            });
        }
        let int =
            |s: &str, field: &'static str| -> Result<usize, TraceParseError> {
                s.trim()
                    .parse()
                    .map_err(|source| TraceParseError::BadInteger { line, field, source })
            };
        let float =
            |s: &str, field: &'static str| -> Result<f64, TraceParseError> {
                s.trim()
                    .parse()
                    .map_err(|source| TraceParseError::BadNumber { line, field, source })
            };
        records.push(TraceRecord {
            iter: int(fields[0], "iter")?,
            sim_time: float(fields[1], "sim_time")?,
            energy: float(fields[2], "energy")?,
            grad_norm: float(fields[3], "grad_norm")?,
            orth_error: float(fields[4], "orth_error")?,
            half_spec_min: float(fields[5], "half_spec_min")?,
            half_spec_max: float(fields[6], "half_spec_max")?,
            dt: float(fields[7], "dt")?,
            inner_iters: int(fields[8], "inner_iters")?,
        });
    }
    Ok(records)
}
