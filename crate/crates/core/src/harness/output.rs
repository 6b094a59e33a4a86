//! CSV emission and parse-back. Numbers are written with 17 significant
//! digits so a round trip is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::experiment::SweepRow;

pub const CURVE_HEADER: &str = "step,rmse";
pub const SWEEP_HEADER: &str = "scale,filter,mode,rmse_avg,diverged_runs";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| OutputError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `step,rmse` with 1-based steps.
pub fn curve_csv(curve: &[f64]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for (k, v) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{}", k + 1, num(*v));
    }
    s
}

/// Any one-value-per-step series, e.g. `step,beta`.
pub fn series_csv(column: &str, values: &[f64]) -> String {
    let mut s = format!("step,{column}\n");
    for (k, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{}", k + 1, num(*v));
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            num(r.scale),
            r.result.filter.variant,
            r.result.filter.mode,
            num(r.result.time_avg_rmse),
            r.result.diverged_runs
        );
    }
    s
}

fn data_lines<'a>(
    text: &'a str,
    header: &str,
) -> Result<impl Iterator<Item = (usize, &'a str)>, OutputError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => Ok(lines.map(|(i, l)| (i + 1, l))),
        _ => Err(OutputError::Parse {
            line: 1,
            message: format!("expected header `{header}`"),
        }),
    }
}

fn parse_field<T: std::str::FromStr>(line: usize, field: Option<&str>) -> Result<T, OutputError> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| OutputError::Parse {
            line,
            message: format!("bad field {field:?}"),
        })
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<f64>, OutputError> {
    data_lines(text, CURVE_HEADER)?
        .map(|(line, l)| {
            let mut it = l.split(',');
            let _step: usize = parse_field(line, it.next())?;
            parse_field(line, it.next())
        })
        .collect()
}

/// Parsed sweep row: `(scale, filter, mode, rmse_avg, diverged_runs)`.
pub type SweepRecord = (f64, String, String, f64, usize);

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>, OutputError> {
    data_lines(text, SWEEP_HEADER)?
        .map(|(line, l)| {
            let mut it = l.split(',');
            Ok((
                parse_field(line, it.next())?,
                parse_field(line, it.next())?,
                parse_field(line, it.next())?,
                parse_field(line, it.next())?,
                parse_field(line, it.next())?,
            ))
        })
        .collect()
}
