//! Headerless CSV reading and writing for matrices and vectors.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

/// Errors from file-level IO.
#[derive(thiserror::Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: cannot parse '{field}' as a number")]
    Number { line: usize, field: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("empty input")]
    Empty,
}

/// Write a matrix row by row. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_matrix_csv<W: Write>(out: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

pub fn write_vector_csv<W: Write>(out: W, v: &[f64]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    for x in v {
        writeln!(w, "{x}")?;
    }
    w.flush()
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<DMatrix<f64>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let expected = *ncols.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(IoError::Ragged {
                line: line + 1,
                expected,
                found: rec.len(),
            });
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| IoError::Number {
                line: line + 1,
                field: field.to_string(),
            })?;
            data.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or(IoError::Empty)?;
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

/// A single column (or a single row) of numbers.
pub fn read_vector_csv<R: Read>(input: R) -> Result<Vec<f64>, IoError> {
    let m = read_matrix_csv(input)?;
    Ok(m.iter().copied().collect())
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>, IoError> {
    read_matrix_csv(open(path)?)
}

pub fn read_vector_file(path: &Path) -> Result<Vec<f64>, IoError> {
    read_vector_csv(open(path)?)
}

pub fn write_matrix_file(path: &Path, m: &DMatrix<f64>) -> Result<(), IoError> {
    write_matrix_csv(create(path)?, m).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_vector_file(path: &Path, v: &[f64]) -> Result<(), IoError> {
    write_vector_csv(create(path)?, v).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}
