//! Matrix files: headerless CSV and a small little-endian binary format.
//!
//! Binary layout: `b"DPMT"`, `u16` version, `u32` rows, `u32` cols, then
//! row-major `f64` values. Both readers stream one row at a time so the
//! mechanisms never need the whole input in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

const MAGIC: &[u8; 4] = b"DPMT";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.csv` is CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

fn parse_field(field: &str, line: u64, col: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}, column {}: cannot parse {field:?}", col + 1)))?;
    if !v.is_finite() {
        return Err(Error::Format(format!(
            "line {line}, column {}: non-finite value {field:?}",
            col + 1
        )));
    }
    Ok(v)
}

/// Streams rows of a CSV file, checking that every row has the same width.
pub struct CsvRows {
    records: csv::StringRecordsIntoIter<BufReader<File>>,
    width: Option<usize>,
}

impl Iterator for CsvRows {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.records.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(Error::Format(e.to_string()))),
        };
        let line = rec.position().map_or(0, |p| p.line());
        let row: Result<Vec<f64>> = rec.iter().enumerate().map(|(j, f)| parse_field(f, line, j)).collect();
        let row = match row {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        match self.width {
            None => self.width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Some(Err(Error::Format(format!(
                    "line {line}: ragged row with {} fields, expected {w}",
                    row.len()
                ))))
            }
            _ => {}
        }
        Some(Ok(row))
    }
}

/// Streams rows of a binary matrix file.
pub struct BinaryRows {
    reader: BufReader<File>,
    rows: usize,
    cols: usize,
    next: usize,
}

impl BinaryRows {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl Iterator for BinaryRows {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next == self.rows {
            return None;
        }
        let mut buf = vec![0u8; 8 * self.cols];
        if let Err(e) = self.reader.read_exact(&mut buf) {
            return Some(Err(Error::Format(format!("row {}: truncated data ({e})", self.next))));
        }
        let row: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Some(Err(Error::Format(format!(
                "row {}, column {}: non-finite value",
                self.next,
                j + 1
            ))));
        }
        self.next += 1;
        Some(Ok(row))
    }
}

fn read_binary_header(reader: &mut impl Read) -> Result<(usize, usize)> {
    let mut h = [0u8; HEADER_LEN];
    reader
        .read_exact(&mut h)
        .map_err(|_| Error::Format("file too short for a matrix header".into()))?;
    if &h[..4] != MAGIC {
        return Err(Error::Format("bad magic, not a binary matrix file".into()));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported matrix file version {version}")));
    }
    let rows = u32::from_le_bytes(h[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(h[10..14].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

pub fn csv_rows(path: &Path) -> Result<CsvRows> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    Ok(CsvRows {
        records: reader.into_records(),
        width: None,
    })
}

pub fn binary_rows(path: &Path) -> Result<BinaryRows> {
    let mut reader = BufReader::new(File::open(path)?);
    let (rows, cols) = read_binary_header(&mut reader)?;
    Ok(BinaryRows {
        reader,
        rows,
        cols,
        next: 0,
    })
}

/// Row iterator for either format.
pub fn open_rows(path: &Path, format: MatrixFormat) -> Result<Box<dyn Iterator<Item = Result<Vec<f64>>>>> {
    Ok(match format {
        MatrixFormat::Csv => Box::new(csv_rows(path)?),
        MatrixFormat::Binary => Box::new(binary_rows(path)?),
    })
}

/// `(rows, cols)` without keeping any data. CSV needs a full validating pass.
pub fn probe_shape(path: &Path, format: MatrixFormat) -> Result<(usize, usize)> {
    match format {
        MatrixFormat::Binary => Ok(binary_rows(path)?.shape()),
        MatrixFormat::Csv => {
            let mut rows = 0;
            let mut cols = 0;
            for row in csv_rows(path)? {
                cols = row?.len();
                rows += 1;
            }
            if rows == 0 {
                return Err(Error::Format(format!("{} is empty", path.display())));
            }
            Ok((rows, cols))
        }
    }
}

pub fn read_matrix(path: &Path, format: MatrixFormat) -> Result<DenseMatrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for row in open_rows(path, format)? {
        let row = row?;
        cols = row.len();
        data.extend(row);
        rows += 1;
    }
    if format == MatrixFormat::Csv && rows == 0 {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn write_matrix(path: &Path, m: &DenseMatrix, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(path)
                .map_err(csv_err)?;
            for i in 0..m.rows() {
                // `Display` for f64 is the shortest string that round-trips
                w.write_record(m.row(i).iter().map(|v| v.to_string()))
                    .map_err(csv_err)?;
            }
            w.flush()?;
        }
        MatrixFormat::Binary => {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(&encode_header(m.rows(), m.cols())?)?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn encode_header(rows: usize, cols: usize) -> Result<[u8; HEADER_LEN]> {
    let r = u32::try_from(rows).map_err(|_| Error::Capacity(format!("{rows} rows exceed u32")))?;
    let c = u32::try_from(cols).map_err(|_| Error::Capacity(format!("{cols} columns exceed u32")))?;
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    h[6..10].copy_from_slice(&r.to_le_bytes());
    h[10..14].copy_from_slice(&c.to_le_bytes());
    Ok(h)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn sample() -> DenseMatrix {
        DenseMatrix::new(3, 2, vec![0.1, -2.5e-300, 1.0 / 3.0, 7.0, f64::MAX, -0.0]).unwrap()
    }

    #[test]
    fn round_trips_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("m.csv", MatrixFormat::Csv), ("m.dpbin", MatrixFormat::Binary)] {
            let p = dir.path().join(name);
            write_matrix(&p, &sample(), fmt).unwrap();
            assert_eq!(MatrixFormat::from_path(&p), fmt);
            let back = read_matrix(&p, fmt).unwrap();
            assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                sample().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(probe_shape(&p, fmt).unwrap(), (3, 2));
        }
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "1,2\n3,4\n5\n").unwrap();
        let msg = read_matrix(&p, MatrixFormat::Csv).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("ragged"), "{msg}");
        fs::write(&p, "1,2\nNaN,4\n").unwrap();
        let msg = read_matrix(&p, MatrixFormat::Csv).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("non-finite"), "{msg}");
        fs::write(&p, "1,x\n").unwrap();
        assert!(matches!(read_matrix(&p, MatrixFormat::Csv), Err(Error::Format(_))));
        fs::write(&p, "").unwrap();
        assert!(matches!(read_matrix(&p, MatrixFormat::Csv), Err(Error::Format(_))));
    }

    #[test]
    fn binary_rejects_bad_headers_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dpbin");
        write_matrix(&p, &sample(), MatrixFormat::Binary).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, &bytes).unwrap();
        assert!(read_matrix(&p, MatrixFormat::Binary).is_err());
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(read_matrix(&p, MatrixFormat::Binary)
            .unwrap_err()
            .to_string()
            .contains("magic"));
    }
}
