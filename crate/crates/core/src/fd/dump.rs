//! Feature matrix files.
//!
//! Binary layout (little endian): 4-byte magic `CGFD`, `u64` feature
//! dimension `d`, `u64` row count `n`, then `n * d` `f64` values row-major.
//! CSV files hold one sample per row; a leading non-numeric header row is
//! skipped.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const FEATURE_DUMP_MAGIC: &[u8; 4] = b"CGFD";

pub fn write_feature_dump(path: &Path, features: &DMatrix<f64>) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(FEATURE_DUMP_MAGIC).map_err(io)?;
    w.write_all(&(features.ncols() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(features.nrows() as u64).to_le_bytes()).map_err(io)?;
    for r in features.row_iter() {
        for v in r.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_feature_csv(path: &Path, features: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for r in features.row_iter() {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads either format, dispatching on the magic bytes.
pub fn read_feature_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let io = |e| Error::io(path, e);
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io)?
        .read_to_end(&mut bytes)
        .map_err(io)?;
    if bytes.starts_with(FEATURE_DUMP_MAGIC) {
        read_binary(path, &bytes)
    } else {
        read_csv(path, &bytes)
    }
}

fn read_binary(path: &Path, bytes: &[u8]) -> Result<DMatrix<f64>> {
    let bad = |reason: &str| Error::ParseError(format!("{}: {reason}", path.display()));
    if bytes.len() < 20 {
        return Err(bad("truncated header"));
    }
    let d = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() != n * d * 8 {
        return Err(bad(&format!("expected {} bytes of data, found {}", n * d * 8, body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(n, d, &values))
}

fn read_csv(path: &Path, bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(bytes));
    let mut values = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::ParseError(format!(
                    "{} row {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        };
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => return Err(Error::DimensionMismatch(d, row.len())),
            _ => {}
        }
        values.extend(row);
        n += 1;
    }
    Ok(DMatrix::from_row_slice(n, d.unwrap_or(0), &values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_and_csv_agree() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.37 - 1.0);
        let b = dir.path().join("f.bin");
        let c = dir.path().join("f.csv");
        write_feature_dump(&b, &m).unwrap();
        write_feature_csv(&c, &m).unwrap();
        assert_eq!(read_feature_matrix(&b).unwrap(), m);
        assert_eq!(read_feature_matrix(&c).unwrap(), m);
    }

    #[test]
    fn csv_header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        std::fs::write(&p, "f0,f1\n1,2\n3,4\n").unwrap();
        let m = read_feature_matrix(&p).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let mut bytes = FEATURE_DUMP_MAGIC.to_vec();
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(1.0f64.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_feature_matrix(&p), Err(Error::ParseError(_))));
    }
}
