//! CSV serialization of traces and metrics.
//!
//! Floats are written with 17 significant digits so that reading a file back
//! reproduces the in-memory values bit for bit.

use std::io::{Read, Write};

use super::runner::TraceLog;
use crate::error::{Error, Result};

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_csv(log: &TraceLog, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "weight", "value", "divergent"])
        .map_err(csv_io)?;
    for r in &log.rows {
        w.write_record([
            float(r.t),
            log.weight_names[r.weight].clone(),
            float(r.value),
            (r.divergent as u8).to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(log: &TraceLog, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phase", "iteration", "t", "set", "mse", "accuracy"])
        .map_err(csv_io)?;
    for m in &log.metrics {
        w.write_record([
            m.phase.to_string(),
            m.iteration.to_string(),
            float(m.t),
            m.set.clone(),
            float(m.metrics.mse),
            m.metrics.accuracy.map(float).unwrap_or_default(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed `trace.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub weight: String,
    pub value: f64,
    pub divergent: bool,
}

pub fn read_trace_csv(input: impl Read) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{s}` is not a number"),
            })
        };
        if rec.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 columns, found {}", rec.len()),
            });
        }
        out.push(TraceRecord {
            t: num(&rec[0])?,
            weight: rec[1].to_string(),
            value: num(&rec[2])?,
            divergent: &rec[3] == "1",
        });
    }
    Ok(out)
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numeric(format!("{other:?}")),
    }
}
