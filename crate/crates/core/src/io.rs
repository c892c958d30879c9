//! CSV ingestion and output.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// What to do with rows holding empty, `NA` or non-numeric cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    ErrorOnMissing,
    DropRows,
}

/// A rectangular table of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: DenseMatrix,
    /// Column names when the file has a header row.
    pub names: Option<Vec<String>>,
    /// Rows removed under [`MissingPolicy::DropRows`].
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn p(&self) -> usize {
        self.values.cols()
    }

    /// Names from the header, or `x1, x2, ...`.
    pub fn column_names(&self) -> Vec<String> {
        match &self.names {
            Some(n) => n.clone(),
            None => (1..=self.p()).map(|j| format!("x{j}")).collect(),
        }
    }
}

const MISSING_TOKENS: [&str; 5] = ["", "na", "n/a", "nan", "."];

fn is_missing_token(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell.trim().to_ascii_lowercase().as_str())
}

/// A finite value, or `None` for missing and non-numeric cells.
fn parse_cell(cell: &str) -> Option<f64> {
    if is_missing_token(cell) {
        return None;
    }
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a numeric CSV. The first row is taken as a header when it holds a
/// cell that is neither a number nor a missing-value token.
pub fn ingest_csv(path: &Path, policy: MissingPolicy) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;

    let mut names = None;
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut dropped_rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let line = line + 1;
        if line == 1 && record.iter().any(|c| !is_missing_token(c) && c.parse::<f64>().is_err()) {
            names = Some(record.iter().map(str::to_owned).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Csv(format!(
                "{}: line {line} has {} fields, expected {w}",
                path.display(),
                record.len()
            )));
        }
        let parsed: Vec<Option<f64>> = record.iter().map(parse_cell).collect();
        if let Some(col) = parsed.iter().position(Option::is_none) {
            match policy {
                MissingPolicy::DropRows => {
                    dropped_rows += 1;
                    continue;
                }
                MissingPolicy::ErrorOnMissing => {
                    return Err(Error::Csv(format!(
                        "{}: line {line}, column {}: missing or non-numeric value '{}'",
                        path.display(),
                        col + 1,
                        &record[col]
                    )))
                }
            }
        }
        values.extend(parsed.into_iter().flatten());
        rows += 1;
    }
    let p = width.unwrap_or(0);
    if rows == 0 || p == 0 {
        return Err(Error::InsufficientData(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset {
        values: DenseMatrix::from_row_major(rows, p, &values)?,
        names,
        dropped_rows,
    })
}

/// Writes `m` with a header row. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_matrix_csv(path: &Path, m: &DenseMatrix, header: &[String]) -> Result<()> {
    if header.len() != m.cols() {
        return Err(Error::Dimension(format!(
            "{} header names for {} columns",
            header.len(),
            m.cols()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..m.rows() {
        w.write_record((0..m.cols()).map(|j| m.get(i, j).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Header `prefix1, prefix2, ...`.
pub fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|j| format!("{prefix}{j}")).collect()
}

/// Reads a two-column `column_name,group` file (header optional) and returns
/// the group of each name in `columns`. Every column must be mapped.
pub fn read_groups(path: &Path, columns: &[String]) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Csv(format!(
                "{}: line {} must have exactly 2 fields",
                path.display(),
                i + 1
            )));
        }
        if i == 0 && record[0].eq_ignore_ascii_case("column_name") {
            continue;
        }
        map.insert(record[0].to_owned(), record[1].to_owned());
    }
    columns
        .iter()
        .map(|c| {
            map.get(c)
                .cloned()
                .ok_or_else(|| Error::Csv(format!("{}: no group for column '{c}'", path.display())))
        })
        .collect()
}
