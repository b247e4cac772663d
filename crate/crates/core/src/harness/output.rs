use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{CellSummary, ExperimentResult, SlopeFit};
use crate::error::{Error, Result};
use crate::textfmt::fmt_f64;

pub const RESULTS_HEADER: [&str; 7] = [
    "estimator",
    "n",
    "m",
    "replications",
    "mean_abs_error",
    "std_abs_error",
    "wall_time_s",
];
pub const SLOPES_HEADER: [&str; 4] = ["estimator", "slope", "intercept", "slope_stderr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

fn csv_string(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn results_csv(cells: &[CellSummary]) -> Result<String> {
    csv_string(
        &RESULTS_HEADER,
        cells.iter().map(|c| {
            vec![
                c.estimator.clone(),
                c.n.to_string(),
                c.m.to_string(),
                c.replications.to_string(),
                fmt_f64(c.mean_abs_error),
                fmt_f64(c.std_abs_error),
                fmt_f64(c.wall_time_s),
            ]
        }),
    )
}

pub fn slopes_csv(slopes: &[SlopeFit]) -> Result<String> {
    csv_string(
        &SLOPES_HEADER,
        slopes.iter().map(|s| {
            vec![
                s.estimator.clone(),
                fmt_f64(s.slope),
                fmt_f64(s.intercept),
                fmt_f64(s.slope_stderr),
            ]
        }),
    )
}

#[derive(Serialize)]
struct JsonResult<'a> {
    theta: f64,
    theta_eval_points: usize,
    cells: Vec<JsonCell<'a>>,
    slopes: Vec<JsonSlope<'a>>,
}

// floats as 17-digit strings so NaN survives and values round-trip exactly
#[derive(Serialize)]
struct JsonCell<'a> {
    estimator: &'a str,
    n: usize,
    m: usize,
    replications: usize,
    mean_abs_error: String,
    std_abs_error: String,
    wall_time_s: String,
}

#[derive(Serialize)]
struct JsonSlope<'a> {
    estimator: &'a str,
    slope: String,
    intercept: String,
    slope_stderr: String,
}

pub fn results_json(result: &ExperimentResult) -> Result<String> {
    let doc = JsonResult {
        theta: result.theta.value,
        theta_eval_points: result.theta.eval_points,
        cells: result
            .cells
            .iter()
            .map(|c| JsonCell {
                estimator: &c.estimator,
                n: c.n,
                m: c.m,
                replications: c.replications,
                mean_abs_error: fmt_f64(c.mean_abs_error),
                std_abs_error: fmt_f64(c.std_abs_error),
                wall_time_s: fmt_f64(c.wall_time_s),
            })
            .collect(),
        slopes: result
            .slopes
            .iter()
            .map(|s| JsonSlope {
                estimator: &s.estimator,
                slope: fmt_f64(s.slope),
                intercept: fmt_f64(s.intercept),
                slope_stderr: fmt_f64(s.slope_stderr),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

/// Companion slope file next to a results CSV: `x.csv` -> `x_slopes.csv`.
pub fn slopes_path(results: &Path) -> PathBuf {
    let stem = results
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    results.with_file_name(format!("{stem}_slopes.csv"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `result` to `path`. CSV output also writes the slope table to [`slopes_path`].
pub fn emit_results(result: &ExperimentResult, format: OutputFormat, path: &Path) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            write(path, &results_csv(&result.cells)?)?;
            write(&slopes_path(path), &slopes_csv(&result.slopes)?)
        }
        OutputFormat::Json => write(path, &results_json(result)?),
    }
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    line: usize,
) -> Result<T> {
    let raw = record.get(idx).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("column `{}`: cannot parse `{raw}`", RESULTS_HEADER[idx]),
    })
}

/// Parses a results CSV written by [`emit_results`].
pub fn parse_results_csv(text: &str) -> Result<Vec<CellSummary>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header `{}`", RESULTS_HEADER.join(",")),
        });
    }
    let mut cells = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        cells.push(CellSummary {
            estimator: record.get(0).unwrap_or("").to_string(),
            n: parse_field(&record, 1, line)?,
            m: parse_field(&record, 2, line)?,
            replications: parse_field(&record, 3, line)?,
            mean_abs_error: parse_field(&record, 4, line)?,
            std_abs_error: parse_field(&record, 5, line)?,
            wall_time_s: parse_field(&record, 6, line)?,
            abs_errors: Vec::new(),
        });
    }
    Ok(cells)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<CellSummary>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text)
}
