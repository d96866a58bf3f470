//! CSV and binary writers for simulation and operator artifacts.
//!
//! All CSV output uses `.` as the decimal separator, LF line endings, and
//! UTF-8. Floats are written with Rust's shortest-roundtrip formatting, so
//! parsing a value back yields the identical bits; rerunning a deterministic
//! computation therefore reproduces files byte for byte.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fpe::OperatorMatrix;
use crate::integrate::{Ensemble, PathSet};
use crate::model::GridDensity;
use crate::steady::Quasipotential;

/// Magic bytes opening the binary trajectory format.
pub const PATHS_MAGIC: [u8; 8] = *b"SDEPATH1";

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Quote a text field per RFC 4180 when it contains a delimiter.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Endpoint table: one row per path per state component.
pub fn write_endpoints_csv<W: Write>(out: &mut W, ens: &Ensemble) -> Result<()> {
    writeln!(out, "path_id,component_index,value")?;
    for p in 0..ens.n_paths {
        for (c, &v) in ens.endpoint(p).iter().enumerate() {
            writeln!(out, "{p},{c},{}", fmt(v))?;
        }
    }
    Ok(())
}

/// Scalar sample table (e.g. discretized stochastic-integral draws).
pub fn write_samples_csv<W: Write>(out: &mut W, samples: &[f64]) -> Result<()> {
    writeln!(out, "sample_id,value")?;
    for (i, &v) in samples.iter().enumerate() {
        writeln!(out, "{i},{}", fmt(v))?;
    }
    Ok(())
}

/// Density snapshots: `t,node_index,x(,y),w`, one block per snapshot.
pub fn write_density_csv<W: Write>(out: &mut W, snapshots: &[GridDensity]) -> Result<()> {
    let dim = match snapshots.first() {
        Some(w) => w.grid().dim(),
        None => return Err(Error::param("snapshots", "need at least one density")),
    };
    match dim {
        1 => writeln!(out, "t,node_index,x,w")?,
        _ => writeln!(out, "t,node_index,x,y,w")?,
    }
    for w in snapshots {
        let t = fmt(w.time());
        for (i, &v) in w.values().iter().enumerate() {
            let x = w.grid().coord(i);
            match dim {
                1 => writeln!(out, "{t},{i},{},{}", fmt(x[0]), fmt(v))?,
                _ => writeln!(out, "{t},{i},{},{},{}", fmt(x[0]), fmt(x[1]), fmt(v))?,
            }
        }
    }
    Ok(())
}

/// Coordinate-list dump of an assembled operator (one entry per slot).
pub fn write_operator_csv<W: Write>(out: &mut W, op: &OperatorMatrix) -> Result<()> {
    writeln!(out, "row,col,value")?;
    for (r, c, v) in op.matrix().merged().iter_entries() {
        writeln!(out, "{r},{c},{}", fmt(v))?;
    }
    Ok(())
}

/// Steady-state table: node coordinates, density weight, quasipotential.
pub fn write_steady_csv<W: Write>(
    out: &mut W,
    w: &GridDensity,
    phi: &Quasipotential,
) -> Result<()> {
    if phi.values().len() != w.values().len() {
        return Err(Error::param("phi", "grid does not match the density"));
    }
    let dim = w.grid().dim();
    match dim {
        1 => writeln!(out, "x,w,phi")?,
        _ => writeln!(out, "x,y,w,phi")?,
    }
    for (i, &v) in w.values().iter().enumerate() {
        let x = w.grid().coord(i);
        let p = fmt(phi.values()[i]);
        match dim {
            1 => writeln!(out, "{},{},{p}", fmt(x[0]), fmt(v))?,
            _ => writeln!(out, "{},{},{},{p}", fmt(x[0]), fmt(x[1]), fmt(v))?,
        }
    }
    Ok(())
}

/// One row of a reversal-test report.
#[derive(Debug, Clone)]
pub struct ReversalRow {
    pub test_name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Reversal-test table: `test_name,statistic,threshold,pass`.
pub fn write_reversal_csv<W: Write>(out: &mut W, rows: &[ReversalRow]) -> Result<()> {
    writeln!(out, "test_name,statistic,threshold,pass")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            field(&r.test_name),
            fmt(r.statistic),
            fmt(r.threshold),
            r.pass
        )?;
    }
    Ok(())
}

/// One row of a summary report.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub test_name: String,
    pub quantity: String,
    pub expected: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Summary table: `test_name,quantity,expected,observed,tolerance,pass`.
/// Rows are written in the order given; callers keep that order fixed.
pub fn write_report_csv<W: Write>(out: &mut W, rows: &[ReportRow]) -> Result<()> {
    writeln!(out, "test_name,quantity,expected,observed,tolerance,pass")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            field(&r.test_name),
            field(&r.quantity),
            fmt(r.expected),
            fmt(r.observed),
            fmt(r.tolerance),
            r.pass
        )?;
    }
    Ok(())
}

/// Binary trajectory dump.
///
/// Layout, all little-endian:
///   bytes 0..8    magic `SDEPATH1`
///   bytes 8..32   three u64: n_paths, n_times, state_dim
///   then          n_times f64 sample times
///   then          n_paths blocks of n_times x state_dim f64, row-major
pub fn write_paths_binary<W: Write>(out: &mut W, paths: &PathSet) -> Result<()> {
    out.write_all(&PATHS_MAGIC)?;
    for dim in [paths.n_paths, paths.times.len(), paths.state_dim] {
        out.write_all(&(dim as u64).to_le_bytes())?;
    }
    for &t in &paths.times {
        out.write_all(&t.to_le_bytes())?;
    }
    for &v in paths.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Decoded contents of a binary trajectory dump.
#[derive(Debug, Clone)]
pub struct PathsDump {
    pub n_paths: usize,
    pub state_dim: usize,
    pub times: Vec<f64>,
    /// `n_paths` blocks of `times.len() x state_dim` states, row-major.
    pub data: Vec<f64>,
}

pub fn read_paths_binary<R: Read>(input: &mut R) -> Result<PathsDump> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if magic != PATHS_MAGIC {
        return Err(Error::param("input", "not a trajectory dump (bad magic)"));
    }
    let mut word = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        input.read_exact(&mut word)?;
        *d = u64::from_le_bytes(word) as usize;
    }
    let [n_paths, n_times, state_dim] = dims;
    let total = n_paths
        .checked_mul(n_times)
        .and_then(|v| v.checked_mul(state_dim))
        .ok_or_else(|| Error::param("input", "dimension overflow in header"))?;
    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            input.read_exact(&mut word)?;
            v.push(f64::from_le_bytes(word));
        }
        Ok(v)
    };
    let times = read_f64s(n_times)?;
    let data = read_f64s(total)?;
    Ok(PathsDump {
        n_paths,
        state_dim,
        times,
        data,
    })
}
