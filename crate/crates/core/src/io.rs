//! CSV ingestion: a header row, numeric cells with '.' decimals, no missing values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{RawDesign, ResponseVector};
use crate::error::{Error, Result};

/// Covariate names in file order (response column removed).
pub type ColumnNames = Vec<String>;

struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(Table { header, rows })
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        line,
        message: format!("non-numeric value {cell:?} in column {column:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value {cell:?} in column {column:?}"),
        });
    }
    Ok(v)
}

fn split_covariates(table: &Table, response: usize) -> Result<(RawDesign, ColumnNames)> {
    let names: ColumnNames = table
        .header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != response)
        .map(|(_, h)| h.clone())
        .collect();
    let n = table.rows.len();
    let mut data = vec![0.0; n * names.len()];
    for (i, (line, row)) in table.rows.iter().enumerate() {
        let mut jj = 0;
        for (j, cell) in row.iter().enumerate() {
            if j == response {
                continue;
            }
            data[jj * n + i] = parse_cell(cell, *line, &table.header[j])?;
            jj += 1;
        }
    }
    Ok((RawDesign::from_column_major(n, names.len(), data)?, names))
}

fn column_index(table: &Table, name: &str) -> Result<usize> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_owned()))
}

/// Reads a numeric CSV; `response_column` becomes the (centered) response,
/// the other columns form the design in file order.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    response_column: &str,
) -> Result<(RawDesign, ResponseVector, ColumnNames)> {
    let table = read_table(path.as_ref())?;
    let r = column_index(&table, response_column)?;
    let y = table
        .rows
        .iter()
        .map(|(line, row)| parse_cell(&row[r], *line, response_column))
        .collect::<Result<Vec<_>>>()?;
    let (x, names) = split_covariates(&table, r)?;
    Ok((x, ResponseVector::new(y)?, names))
}

/// Class labels mapped to indices in first-appearance order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabels {
    pub names: Vec<String>,
    pub indices: Vec<usize>,
}

impl ClassLabels {
    pub fn from_strings<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut names: Vec<String> = Vec::new();
        let indices = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                match names.iter().position(|n| n == l) {
                    Some(i) => i,
                    None => {
                        names.push(l.to_owned());
                        names.len() - 1
                    }
                }
            })
            .collect();
        Self { names, indices }
    }

    pub fn classes(&self) -> usize {
        self.names.len()
    }
}

/// Reads a CSV whose `label_column` holds class labels (any strings).
pub fn ingest_csv_labels(
    path: impl AsRef<Path>,
    label_column: &str,
) -> Result<(RawDesign, ClassLabels, ColumnNames)> {
    let table = read_table(path.as_ref())?;
    let r = column_index(&table, label_column)?;
    let labels: Vec<&str> = table.rows.iter().map(|(_, row)| row[r].as_str()).collect();
    let labels = ClassLabels::from_strings(&labels);
    let (x, names) = split_covariates(&table, r)?;
    Ok((x, labels, names))
}
