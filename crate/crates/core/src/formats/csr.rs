use crate::error::{Error, Result};
use crate::formats::DenseMatrix;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from raw arrays, validating every structural invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if row_ptr.len() != rows + 1 {
            return Err(Error::InvalidStructure(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                rows + 1
            )));
        }
        if row_ptr[0] != 0 {
            return Err(Error::InvalidStructure("row_ptr[0] must be 0".into()));
        }
        if values.len() != col_idx.len() {
            return Err(Error::InvalidStructure(format!(
                "{} values for {} column indices",
                values.len(),
                col_idx.len()
            )));
        }
        if row_ptr[rows] != col_idx.len() {
            return Err(Error::InvalidStructure(format!(
                "row_ptr ends at {} but there are {} nonzeros",
                row_ptr[rows],
                col_idx.len()
            )));
        }
        for r in 0..rows {
            let (start, end) = (row_ptr[r], row_ptr[r + 1]);
            if start > end {
                return Err(Error::InvalidStructure(format!(
                    "row_ptr decreases at row {r}"
                )));
            }
            let row = &col_idx[start..end];
            if row.iter().any(|&c| c >= cols) {
                return Err(Error::InvalidStructure(format!(
                    "column index out of range in row {r}"
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidStructure(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let row = out.row_mut(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row[self.col_idx[k]] = self.values[k];
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn dense_to_csr(m: &DenseMatrix) -> CsrMatrix {
    CsrMatrix::from_dense(m)
}

pub fn csr_to_dense(m: &CsrMatrix) -> DenseMatrix {
    m.to_dense()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_has_no_nonzeros() {
        let csr = dense_to_csr(&DenseMatrix::zeros(3, 5));
        assert_eq!(csr.nnz(), 0);
        assert_eq!(csr.row_ptr(), &[0, 0, 0, 0]);
        assert_eq!(csr_to_dense(&csr), DenseMatrix::zeros(3, 5));
    }

    #[test]
    fn identity_layout() {
        let csr = dense_to_csr(&DenseMatrix::identity(2));
        assert_eq!(csr.row_ptr(), &[0, 1, 2]);
        assert_eq!(csr.col_idx(), &[0, 1]);
        assert_eq!(csr.values(), &[1.0, 1.0]);
    }

    #[test]
    fn from_parts_validates() {
        assert!(CsrMatrix::from_parts(2, 2, vec![0, 1, 2], vec![0, 1], vec![1., 1.]).is_ok());
        // duplicate column in a row
        assert!(CsrMatrix::from_parts(1, 2, vec![0, 2], vec![1, 1], vec![1., 1.]).is_err());
        // decreasing row_ptr
        assert!(CsrMatrix::from_parts(2, 2, vec![0, 2, 1], vec![0, 1], vec![1., 1.]).is_err());
        // column out of range
        assert!(CsrMatrix::from_parts(1, 2, vec![0, 1], vec![2], vec![1.]).is_err());
        assert!(CsrMatrix::from_parts(1, 2, vec![1, 1], vec![0], vec![1.]).is_err());
    }
}
