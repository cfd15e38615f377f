//! Panel and matrix file formats.
//!
//! Panels are CSV with a leading schema comment, an ISO-8601 date column and
//! one column per tenor (`t03`, `t06`, ...). Floats are written with 17
//! significant digits so a write/read round trip is bit-exact. All writes go
//! through a temp file and an atomic rename.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use frc_model::{MarketPanel, ModelError};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

pub const PANEL_SCHEMA: &str = "# frc-panel-v1";
pub const MANIFEST_SCHEMA: u32 = 1;

/// Whether a rates file carries levels (differenced on ingest) or daily
/// increments, decided by the header's first column name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatesKind {
    Levels,
    Increments,
}

fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a dated value table. `first_col` is `date` for levels and
/// `date_delta` for increments.
pub fn write_panel_csv(
    path: &Path,
    dates: &[NaiveDate],
    values: &DMatrix<f64>,
    first_col: &str,
) -> CliResult<()> {
    let n = values.ncols();
    let mut out = String::new();
    out.push_str(PANEL_SCHEMA);
    out.push('\n');
    out.push_str(first_col);
    for j in 0..n {
        out.push_str(&format!(",t{:02}", 3 * (j + 1)));
    }
    out.push('\n');
    for (t, date) in dates.iter().enumerate() {
        out.push_str(&date.format("%Y-%m-%d").to_string());
        for j in 0..n {
            out.push(',');
            out.push_str(&format_float(values[(t, j)]));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

struct RawTable {
    dates: Vec<NaiveDate>,
    values: DMatrix<f64>,
    kind: RatesKind,
}

fn parse_table(path: &Path) -> CliResult<RawTable> {
    let content = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = content.lines().enumerate().peekable();
    // Optional schema comment; unknown versions are rejected.
    if let Some((_, first)) = lines.peek() {
        if first.starts_with('#') {
            if first.trim() != PANEL_SCHEMA {
                return Err(CliError::validation(format!(
                    "{}: unknown schema '{}', expected '{PANEL_SCHEMA}'",
                    path.display(),
                    first.trim()
                )));
            }
            lines.next();
        }
    }
    let (header_line_no, header) = lines
        .next()
        .ok_or_else(|| CliError::validation(format!("{}: empty file", path.display())))?;
    let mut cols = header.split(',');
    let kind = match cols.next() {
        Some("date") => RatesKind::Levels,
        Some("date_delta") => RatesKind::Increments,
        other => {
            return Err(CliError::validation(format!(
                "{} line {}: first column must be 'date' or 'date_delta', got {:?}",
                path.display(),
                header_line_no + 1,
                other
            )))
        }
    };
    let n = cols.count();
    if n == 0 {
        return Err(CliError::validation(format!(
            "{}: no tenor columns in header",
            path.display()
        )));
    }
    let mut dates = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let date_str = fields.next().unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|e| {
            CliError::validation(format!(
                "{} line {}: bad date '{date_str}': {e}",
                path.display(),
                line_no + 1
            ))
        })?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(CliError::validation(format!(
                    "{} line {}: duplicate or unsorted date {date}",
                    path.display(),
                    line_no + 1
                )));
            }
        }
        dates.push(date);
        let mut count = 0;
        for field in fields {
            let v: f64 = field.parse().map_err(|e| {
                CliError::validation(format!(
                    "{} line {}: non-numeric cell '{field}': {e}",
                    path.display(),
                    line_no + 1
                ))
            })?;
            rows.push(v);
            count += 1;
        }
        if count != n {
            return Err(CliError::validation(format!(
                "{} line {}: expected {n} value columns, got {count}",
                path.display(),
                line_no + 1
            )));
        }
    }
    if dates.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    let values = DMatrix::from_row_iterator(dates.len(), n, rows);
    Ok(RawTable { dates, values, kind })
}

/// Reads a rates/flows file pair into a panel. Rates given as levels are
/// first-differenced (dropping the first row of both files); the two files
/// must carry identical date columns.
pub fn ingest_panel(rates_path: &Path, flows_path: &Path) -> CliResult<MarketPanel> {
    let rates = parse_table(rates_path)?;
    let flows = parse_table(flows_path)?;
    if rates.dates.len() != flows.dates.len() {
        return Err(CliError::validation(format!(
            "date mismatch: {} has {} rows, {} has {}",
            rates_path.display(),
            rates.dates.len(),
            flows_path.display(),
            flows.dates.len()
        )));
    }
    for (a, b) in rates.dates.iter().zip(&flows.dates) {
        if a != b {
            return Err(CliError::validation(format!(
                "date mismatch between files: first offending date {a} vs {b}"
            )));
        }
    }
    if rates.values.ncols() != flows.values.ncols() {
        return Err(CliError::validation(format!(
            "tenor mismatch: rates has {} columns, flows has {}",
            rates.values.ncols(),
            flows.values.ncols()
        )));
    }
    let (dates, delta_f, delta_q) = match rates.kind {
        RatesKind::Increments => (rates.dates, rates.values, flows.values),
        RatesKind::Levels => {
            let n_days = rates.dates.len();
            if n_days < 2 {
                return Err(CliError::validation(
                    "need at least two rows of levels to form increments".into(),
                ));
            }
            let n = rates.values.ncols();
            let mut diff = DMatrix::zeros(n_days - 1, n);
            for t in 1..n_days {
                for j in 0..n {
                    diff[(t - 1, j)] = rates.values[(t, j)] - rates.values[(t - 1, j)];
                }
            }
            let flows_trimmed = flows.values.rows(1, n_days - 1).into_owned();
            (rates.dates[1..].to_vec(), diff, flows_trimmed)
        }
    };
    MarketPanel::new(dates, delta_f, delta_q).map_err(CliError::from_model)
}

/// Writes a plain matrix as CSV with row/column tenor labels.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    let mut out = String::from("tenor");
    for j in 0..m.ncols() {
        out.push_str(&format!(",t{:02}", 3 * (j + 1)));
    }
    out.push('\n');
    for i in 0..m.nrows() {
        out.push_str(&format!("t{:02}", 3 * (i + 1)));
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&format_float(m[(i, j)]));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Long-format plot file: one `(x, y, series, value)` row per entry.
pub fn write_longform_csv(
    path: &Path,
    header: (&str, &str, &str, &str),
    rows: &[(String, String, String, f64)],
) -> CliResult<()> {
    let mut out = format!("{},{},{},{}\n", header.0, header.1, header.2, header.3);
    for (x, y, series, value) in rows {
        out.push_str(&format!("{x},{y},{series},{}\n", format_float(*value)));
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(format!("cannot serialize {}: {e}", path.display())))?;
    atomic_write(path, body.as_bytes())
}

/// Write-temp-then-rename so readers never observe partial files.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("artifact"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)
            .map_err(|e| CliError::io(format!("cannot create {}: {e}", tmp.display())))?;
        f.write_all(bytes)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", tmp.display())))?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path)
        .map_err(|e| CliError::io(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

impl CliError {
    pub fn from_model(e: ModelError) -> Self {
        match e {
            ModelError::Numerical(_) | ModelError::IllConditioned { .. } | ModelError::UndefinedScore(_) => {
                CliError::numerical(e.to_string())
            }
            other => CliError::validation(other.to_string()),
        }
    }
}
