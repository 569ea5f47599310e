//! CSV and JSON interchange.
//!
//! CSV is comma separated with `.` decimals. A single header row is allowed
//! and detected by the presence of a non-numeric field in the first record.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::linalg::{DataMode, Dataset};

/// A numeric table and its header, if the input had one.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

fn parse_field(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok()
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(parse_field).collect();
        if rows.is_empty() && header.is_none() && parsed.iter().any(Option::is_none) {
            header = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (col, (value, raw)) in parsed.into_iter().zip(record.iter()).enumerate() {
            match value {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::InvalidData(format!(
                        "line {}, column {}: '{raw}' is not a number",
                        line + 1,
                        col + 1
                    )))
                }
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::InvalidData(format!(
                    "line {} has {} fields, expected {}",
                    line + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if let (Some(h), Some(first)) = (&header, rows.first()) {
        if h.len() != first.len() {
            return Err(Error::InvalidData(format!(
                "header has {} fields but rows have {}",
                h.len(),
                first.len()
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("no numeric rows".into()));
    }
    let (n, d) = (rows.len(), rows[0].len());
    Ok(Table {
        header,
        data: DMatrix::from_fn(n, d, |i, j| rows[i][j]),
    })
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).context(format!("opening {}", path.display()))?;
    Ok(read_table(file).context(format!("reading {}", path.display()))?.data)
}

pub fn read_dataset(path: &Path, mode: DataMode) -> Result<Dataset> {
    let m = read_matrix(path)?;
    match mode {
        DataMode::Vectors => Dataset::from_vectors(m),
        DataMode::Gram => Dataset::from_gram(m),
    }
}

pub fn write_table<W: Write>(writer: W, data: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(h) = header {
        if h.len() != data.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{} header fields for {} columns",
                h.len(),
                data.ncols()
            )));
        }
        w.write_record(h)?;
    }
    for row in data.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Default column names `x1, ..., xd`.
pub fn column_names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

/// Known Gaussian parameters as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl ParamsFile {
    pub fn mean(&self) -> DVector<f64> {
        DVector::from_vec(self.mean.clone())
    }

    pub fn covariance(&self) -> Result<Option<DMatrix<f64>>> {
        let Some(rows) = &self.covariance else {
            return Ok(None);
        };
        let d = rows.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidData(format!(
                "covariance row {} has {} entries, expected {d}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Ok(Some(DMatrix::from_fn(d, d, |i, j| rows[i][j])))
    }
}

pub fn read_params(path: &Path) -> Result<ParamsFile> {
    let file = File::open(path).context(format!("opening {}", path.display()))?;
    let params: ParamsFile = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(Error::from)
        .context(format!("parsing {}", path.display()))?;
    Ok(params)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}
