//! The `BSNN1` container.
//!
//! A standalone matrix file is the magic line `BSNN1` followed by one record.
//! A record is a single header line
//!
//! ```text
//! kind=dense|csr|bsr rows=R cols=C bh=H bw=W nblocks=N dtype=f32|f64
//! ```
//!
//! followed by a little-endian payload: `row_ptr` then `col_idx` as `u32`
//! (absent for dense), then the values (`f32` or `f64`). For `csr` the block
//! shape is `1x1` and `nblocks` is the nonzero count; for `dense` it is
//! `1x1` and `rows * cols`. Checkpoints reuse the same record encoding.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::formats::{BlockSparseMatrix, CsrMatrix, DenseMatrix};

pub const MAGIC: &str = "BSNN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        })
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Corrupt(format!("unknown dtype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredMatrix {
    Dense(DenseMatrix),
    Csr(CsrMatrix),
    Bsr(BlockSparseMatrix),
}

impl StoredMatrix {
    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            StoredMatrix::Dense(m) => m.clone(),
            StoredMatrix::Csr(m) => m.to_dense(),
            StoredMatrix::Bsr(m) => m.to_dense(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StoredMatrix::Dense(_) => "dense",
            StoredMatrix::Csr(_) => "csr",
            StoredMatrix::Bsr(_) => "bsr",
        }
    }
}

impl From<DenseMatrix> for StoredMatrix {
    fn from(m: DenseMatrix) -> Self {
        StoredMatrix::Dense(m)
    }
}

impl From<CsrMatrix> for StoredMatrix {
    fn from(m: CsrMatrix) -> Self {
        StoredMatrix::Csr(m)
    }
}

impl From<BlockSparseMatrix> for StoredMatrix {
    fn from(m: BlockSparseMatrix) -> Self {
        StoredMatrix::Bsr(m)
    }
}

/// Parsed record header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub bh: usize,
    pub bw: usize,
    pub nblocks: usize,
    pub dtype: Dtype,
}

impl fmt::Display for Header {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={} rows={} cols={} bh={} bw={} nblocks={} dtype={}",
            self.kind, self.rows, self.cols, self.bh, self.bw, self.nblocks, self.dtype
        )
    }
}

impl FromStr for Header {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut fields = line.split_ascii_whitespace();
        let mut next = |key: &str| -> Result<String> {
            let tok = fields
                .next()
                .ok_or_else(|| Error::Corrupt(format!("header is missing `{key}`")))?;
            match tok.split_once('=') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(Error::Corrupt(format!(
                    "expected `{key}=` in header, found {tok:?}"
                ))),
            }
        };
        let num = |s: String, key: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Corrupt(format!("bad {key} value {s:?}")))
        };
        let kind = next("kind")?;
        if !matches!(kind.as_str(), "dense" | "csr" | "bsr") {
            return Err(Error::Corrupt(format!("unknown matrix kind {kind:?}")));
        }
        let rows = num(next("rows")?, "rows")?;
        let cols = num(next("cols")?, "cols")?;
        let bh = num(next("bh")?, "bh")?;
        let bw = num(next("bw")?, "bw")?;
        let nblocks = num(next("nblocks")?, "nblocks")?;
        let dtype = next("dtype")?.parse()?;
        Ok(Header {
            kind,
            rows,
            cols,
            bh,
            bw,
            nblocks,
            dtype,
        })
    }
}

fn header_for(m: &StoredMatrix, dtype: Dtype) -> Header {
    let (kind, rows, cols, bh, bw, nblocks) = match m {
        StoredMatrix::Dense(d) => ("dense", d.rows(), d.cols(), 1, 1, d.len()),
        StoredMatrix::Csr(c) => ("csr", c.rows(), c.cols(), 1, 1, c.nnz()),
        StoredMatrix::Bsr(b) => (
            "bsr",
            b.rows(),
            b.cols(),
            b.block_h(),
            b.block_w(),
            b.stored_blocks(),
        ),
    };
    Header {
        kind: kind.to_string(),
        rows,
        cols,
        bh,
        bw,
        nblocks,
        dtype,
    }
}

fn write_indices<W: Write>(w: &mut W, idx: &[usize]) -> Result<()> {
    for &i in idx {
        let v = u32::try_from(i)
            .map_err(|_| Error::InvalidArgument(format!("index {i} does not fit in u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_values<W: Write>(w: &mut W, values: &[f64], dtype: Dtype) -> Result<()> {
    match dtype {
        Dtype::F64 => {
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for v in values {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_indices<R: Read>(r: &mut R, n: usize) -> Result<Vec<usize>> {
    let mut buf = [0u8; 4];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(u32::from_le_bytes(buf) as usize)
        })
        .collect()
}

fn read_values<R: Read>(r: &mut R, n: usize, dtype: Dtype) -> Result<Vec<f64>> {
    match dtype {
        Dtype::F64 => {
            let mut buf = [0u8; 8];
            (0..n)
                .map(|_| {
                    r.read_exact(&mut buf)?;
                    Ok(f64::from_le_bytes(buf))
                })
                .collect()
        }
        Dtype::F32 => {
            let mut buf = [0u8; 4];
            (0..n)
                .map(|_| {
                    r.read_exact(&mut buf)?;
                    Ok(f64::from(f32::from_le_bytes(buf)))
                })
                .collect()
        }
    }
}

/// Reads one `\n`-terminated ASCII line, without the terminator.
pub(crate) fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut buf = Vec::new();
    let n = r.read_until(b'\n', &mut buf)?;
    if n == 0 || buf.last() != Some(&b'\n') {
        return Err(Error::Corrupt("unexpected end of file in header".into()));
    }
    buf.pop();
    String::from_utf8(buf).map_err(|_| Error::Corrupt("header is not valid UTF-8".into()))
}

pub(crate) fn expect_magic<R: BufRead>(r: &mut R) -> Result<()> {
    let line = read_line(r)?;
    if line != MAGIC {
        return Err(Error::Corrupt(format!("bad magic {line:?}")));
    }
    Ok(())
}

/// Writes one header line plus payload, without the magic line.
pub fn write_record<W: Write>(w: &mut W, m: &StoredMatrix, dtype: Dtype) -> Result<()> {
    writeln!(w, "{}", header_for(m, dtype))?;
    match m {
        StoredMatrix::Dense(d) => write_values(w, d.values(), dtype),
        StoredMatrix::Csr(c) => {
            write_indices(w, c.row_ptr())?;
            write_indices(w, c.col_idx())?;
            write_values(w, c.values(), dtype)
        }
        StoredMatrix::Bsr(b) => {
            write_indices(w, b.row_ptr())?;
            write_indices(w, b.col_idx())?;
            write_values(w, b.blocks(), dtype)
        }
    }
}

pub fn read_record<R: BufRead>(r: &mut R) -> Result<StoredMatrix> {
    let header: Header = read_line(r)?.parse()?;
    let corrupt = |e: Error| Error::Corrupt(format!("invalid {} payload: {e}", header.kind));
    match header.kind.as_str() {
        "dense" => {
            if header.nblocks != header.rows * header.cols {
                return Err(Error::Corrupt(format!(
                    "dense record declares {} values for {}x{}",
                    header.nblocks, header.rows, header.cols
                )));
            }
            let values = read_values(r, header.nblocks, header.dtype)?;
            DenseMatrix::new(header.rows, header.cols, values)
                .map(StoredMatrix::Dense)
                .map_err(corrupt)
        }
        "csr" => {
            let row_ptr = read_indices(r, header.rows + 1)?;
            let col_idx = read_indices(r, header.nblocks)?;
            let values = read_values(r, header.nblocks, header.dtype)?;
            CsrMatrix::from_parts(header.rows, header.cols, row_ptr, col_idx, values)
                .map(StoredMatrix::Csr)
                .map_err(corrupt)
        }
        _ => {
            if header.bh == 0 || header.rows % header.bh != 0 {
                return Err(Error::Corrupt(format!(
                    "bsr record has block height {} for {} rows",
                    header.bh, header.rows
                )));
            }
            let row_ptr = read_indices(r, header.rows / header.bh + 1)?;
            let col_idx = read_indices(r, header.nblocks)?;
            let values = read_values(r, header.nblocks * header.bh * header.bw, header.dtype)?;
            BlockSparseMatrix::from_parts(
                header.rows,
                header.cols,
                header.bh,
                header.bw,
                row_ptr,
                col_idx,
                values,
            )
            .map(StoredMatrix::Bsr)
            .map_err(corrupt)
        }
    }
}

pub fn write_matrix<W: Write>(w: &mut W, m: &StoredMatrix, dtype: Dtype) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    write_record(w, m, dtype)
}

pub fn read_matrix<R: BufRead>(r: &mut R) -> Result<StoredMatrix> {
    expect_magic(r)?;
    read_record(r)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &StoredMatrix, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<StoredMatrix> {
    read_matrix(&mut BufReader::new(File::open(path)?))
}
