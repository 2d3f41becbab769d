//! Delimited text input/output shared by ingestion and the CLI.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use ndarray::Array2;

use crate::error::{PpfError, Result};

/// Open a file for reading, transparently decompressing gzip input.
pub fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    drop(file);
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// A header plus data rows, each tagged with its 1-based line number.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h.eq_ignore_ascii_case(name))
    }
}

/// Read a tab- or comma-delimited file with a header row. The delimiter is
/// inferred from the header line. Blank lines and `#` comments are skipped.
pub fn read_table(path: &Path) -> Result<Table> {
    let reader = open_text(path)?;
    let mut header: Option<Vec<String>> = None;
    let mut delim = '\t';
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx as u64 + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match &header {
            None => {
                delim = if trimmed.contains('\t') { '\t' } else { ',' };
                header = Some(trimmed.split(delim).map(|s| s.trim().to_string()).collect());
            }
            Some(h) => {
                let fields: Vec<String> = trimmed.split(delim).map(|s| s.trim().to_string()).collect();
                if fields.len() != h.len() {
                    return Err(PpfError::ingest(
                        path,
                        lineno,
                        format!("expected {} fields, found {}", h.len(), fields.len()),
                    ));
                }
                rows.push((lineno, fields));
            }
        }
    }
    let header = header.ok_or_else(|| PpfError::ingest(path, 1, "missing header"))?;
    Ok(Table { header, rows })
}

pub fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| PpfError::ingest(path, line, format!("{what}: non-numeric value {field:?}")))?;
    if !v.is_finite() {
        return Err(PpfError::ingest(path, line, format!("{what}: non-finite value {field:?}")));
    }
    Ok(v)
}

pub fn parse_u64(path: &Path, line: u64, field: &str, what: &str) -> Result<u64> {
    field
        .parse()
        .map_err(|_| PpfError::ingest(path, line, format!("{what}: expected a non-negative integer, found {field:?}")))
}

/// Write a labelled matrix as CSV. Values use the shortest representation
/// that round-trips exactly.
pub fn write_matrix(
    path: &Path,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &Array2<f64>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    write!(out, "{corner}")?;
    for c in col_labels {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for (r, label) in row_labels.iter().enumerate() {
        write!(out, "{label}")?;
        for c in 0..m.ncols() {
            write!(out, ",{}", m[[r, c]])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let table = read_table(path)?;
    let cols: Vec<String> = table.header[1..].to_vec();
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut values = Vec::with_capacity(table.rows.len() * cols.len());
    for (line, fields) in &table.rows {
        rows.push(fields[0].clone());
        for f in &fields[1..] {
            values.push(parse_f64(path, *line, f, "matrix entry")?);
        }
    }
    let m = Array2::from_shape_vec((rows.len(), cols.len()), values)
        .map_err(|e| PpfError::Data(format!("{}: {e}", path.display())))?;
    Ok((rows, cols, m))
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
