use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::LandmarkShape;
use crate::error::{domain, Result};

/// Reads landmarks from CSV: one row per landmark, columns `x,y[,z]`, with an
/// optional header row. Every row must have the same number of columns.
pub fn read_landmarks<R: Read>(reader: R) -> Result<LandmarkShape> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(domain(format!("row {}: {e}", line + 1))),
        }
    }
    if rows.is_empty() {
        return Err(domain("no landmarks in CSV"));
    }
    LandmarkShape::from_rows(&rows)
}

pub fn read_landmarks_csv(path: impl AsRef<Path>) -> Result<LandmarkShape> {
    read_landmarks(File::open(path)?)
}

pub fn write_landmarks<W: Write>(shape: &LandmarkShape, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header = ["x", "y", "z"];
    wtr.write_record(&header[..shape.dim()])?;
    for row in shape.points().row_iter() {
        wtr.write_record(row.iter().map(|x| x.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_landmarks_csv(shape: &LandmarkShape, path: impl AsRef<Path>) -> Result<()> {
    write_landmarks(shape, File::create(path)?)
}
