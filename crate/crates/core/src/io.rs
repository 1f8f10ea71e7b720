//! CSV reading and writing for datasets, point lists and result tables.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::Dataset;

fn parse_rows(text: &str, with_target: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let n_x = header.len() - usize::from(with_target);
    let expected: Vec<String> = (1..=n_x).map(|i| format!("x{i}")).chain(with_target.then(|| "y".to_string())).collect();
    if header.is_empty() || header != expected {
        return Err(Error::Parse { line: 1, msg: format!("expected header '{}', got '{}'", expected.join(","), header.join(",")) });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, got {}", header.len(), record.len()) });
        }
        let row = record
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { line, msg: format!("'{f}' is not a finite number") }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads a dataset with header `x1,…,xd,y`.
pub fn read_dataset(reader: impl Read) -> Result<Dataset> {
    let text = std::io::read_to_string(reader)?;
    let (_, rows) = parse_rows(&text, true)?;
    let mut xs = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for mut r in rows {
        y.push(r.pop().expect("row has a target column"));
        xs.push(r);
    }
    Dataset::new(xs, y)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// Reads points with header `x1,…,xd`; returns the dimension and the points.
pub fn read_points(reader: impl Read) -> Result<(usize, Vec<Vec<f64>>)> {
    let text = std::io::read_to_string(reader)?;
    let (header, rows) = parse_rows(&text, false)?;
    Ok((header.len(), rows))
}

pub fn read_points_file(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    read_points(std::fs::File::open(path)?)
}

/// Comma-separated table with the given header; floats in shortest round-trip form.
pub fn table_csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn dataset_csv(data: &Dataset) -> String {
    let header: Vec<String> = (1..=data.dim()).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
    let rows: Vec<Vec<f64>> = data.xs.iter().zip(&data.y).map(|(x, y)| x.iter().copied().chain([*y]).collect()).collect();
    table_csv(&header, &rows)
}
