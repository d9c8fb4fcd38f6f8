use crate::error::{Error, Result};
use crate::formats::dense::block_grid;
use crate::formats::DenseMatrix;

/// Block compressed sparse row matrix.
///
/// Stored blocks are kept contiguously in `blocks`, each one row-major
/// `block_h × block_w`, in the same order as `col_idx`. `row_ptr` indexes
/// block rows, so it has `rows / block_h + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseMatrix {
    rows: usize,
    cols: usize,
    block_h: usize,
    block_w: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    blocks: Vec<f64>,
}

impl BlockSparseMatrix {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        rows: usize,
        cols: usize,
        block_h: usize,
        block_w: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        blocks: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        let (grid_rows, grid_cols) = block_grid(rows, cols, block_h, block_w)?;
        if row_ptr.len() != grid_rows + 1 {
            return Err(Error::InvalidStructure(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                grid_rows + 1
            )));
        }
        if row_ptr[0] != 0 {
            return Err(Error::InvalidStructure("row_ptr[0] must be 0".into()));
        }
        if row_ptr[grid_rows] != col_idx.len() {
            return Err(Error::InvalidStructure(format!(
                "row_ptr ends at {} but {} blocks are indexed",
                row_ptr[grid_rows],
                col_idx.len()
            )));
        }
        if blocks.len() != col_idx.len() * block_h * block_w {
            return Err(Error::InvalidStructure(format!(
                "{} block values for {} blocks of {block_h}x{block_w}",
                blocks.len(),
                col_idx.len()
            )));
        }
        for br in 0..grid_rows {
            let (start, end) = (row_ptr[br], row_ptr[br + 1]);
            if start > end {
                return Err(Error::InvalidStructure(format!(
                    "row_ptr decreases at block row {br}"
                )));
            }
            let row = &col_idx[start..end];
            if row.iter().any(|&c| c >= grid_cols) {
                return Err(Error::InvalidStructure(format!(
                    "block column index out of range in block row {br}"
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidStructure(format!(
                    "block column indices not strictly increasing in block row {br}"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            block_h,
            block_w,
            row_ptr,
            col_idx,
            blocks,
        })
    }

    /// Stores every block holding at least one nonzero value.
    pub fn from_dense(m: &DenseMatrix, block_h: usize, block_w: usize) -> Result<Self> {
        let (grid_rows, grid_cols) = m.block_grid(block_h, block_w)?;
        let mut row_ptr = Vec::with_capacity(grid_rows + 1);
        let mut col_idx = Vec::new();
        let mut blocks = Vec::new();
        row_ptr.push(0);
        for br in 0..grid_rows {
            for bc in 0..grid_cols {
                let nonzero = (0..block_h).any(|i| {
                    let row = m.row(br * block_h + i);
                    row[bc * block_w..(bc + 1) * block_w]
                        .iter()
                        .any(|&v| v != 0.0)
                });
                if nonzero {
                    col_idx.push(bc);
                    for i in 0..block_h {
                        let row = m.row(br * block_h + i);
                        blocks.extend_from_slice(&row[bc * block_w..(bc + 1) * block_w]);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: m.rows(),
            cols: m.cols(),
            block_h,
            block_w,
            row_ptr,
            col_idx,
            blocks,
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        let area = self.block_area();
        for br in 0..self.block_rows() {
            for k in self.row_ptr[br]..self.row_ptr[br + 1] {
                let bc = self.col_idx[k];
                let block = &self.blocks[k * area..(k + 1) * area];
                for i in 0..self.block_h {
                    let dst = out.row_mut(br * self.block_h + i);
                    dst[bc * self.block_w..(bc + 1) * self.block_w]
                        .copy_from_slice(&block[i * self.block_w..(i + 1) * self.block_w]);
                }
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

    pub fn block_h(&self) -> usize {
        self.block_h
    }

    pub fn block_w(&self) -> usize {
        self.block_w
    }

    pub fn block_area(&self) -> usize {
        self.block_h * self.block_w
    }

    pub fn block_rows(&self) -> usize {
        self.rows / self.block_h
    }

    pub fn block_cols(&self) -> usize {
        self.cols / self.block_w
    }

    pub fn stored_blocks(&self) -> usize {
        self.col_idx.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.block_rows() * self.block_cols()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn blocks(&self) -> &[f64] {
        &self.blocks
    }

    /// The `k`-th stored block, row-major.
    pub fn block(&self, k: usize) -> &[f64] {
        let area = self.block_area();
        &self.blocks[k * area..(k + 1) * area]
    }
}

pub fn dense_to_bsr(m: &DenseMatrix, block_h: usize, block_w: usize) -> Result<BlockSparseMatrix> {
    BlockSparseMatrix::from_dense(m, block_h, block_w)
}

pub fn bsr_to_dense(m: &BlockSparseMatrix) -> DenseMatrix {
    m.to_dense()
}
