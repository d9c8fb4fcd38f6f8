//! Sparse × dense multiply kernels.
//!
//! Both kernels walk the sparse operand row panel by row panel and accumulate
//! into the matching rows of the output, streaming whole rows of the dense
//! operand. Each output panel depends only on its own row panel of the sparse
//! operand, so the parallel variants assign one panel per task and produce
//! results bitwise identical to the sequential ones.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{BlockSparseMatrix, CsrMatrix, DenseMatrix};

fn check_inner(a_rows: usize, a_cols: usize, b: &DenseMatrix) -> Result<()> {
    if a_cols != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "cannot multiply {a_rows}x{a_cols} by {}x{}",
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

#[inline]
fn axpy_row(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// One block row of `a × b`, written into `panel` (`block_h` rows of `b.cols()`).
fn bsr_panel(a: &BlockSparseMatrix, b: &DenseMatrix, br: usize, panel: &mut [f64]) {
    let (bh, bw, n) = (a.block_h(), a.block_w(), b.cols());
    let rp = a.row_ptr();
    for k in rp[br]..rp[br + 1] {
        let bc = a.col_idx()[k];
        let block = a.block(k);
        for i in 0..bh {
            let out_row = &mut panel[i * n..(i + 1) * n];
            for j in 0..bw {
                let v = block[i * bw + j];
                if v != 0.0 {
                    axpy_row(out_row, v, b.row(bc * bw + j));
                }
            }
        }
    }
}

pub fn bsr_matmul(a: &BlockSparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inner(a.rows(), a.cols(), b)?;
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    let panel_len = a.block_h() * b.cols();
    for (br, panel) in out.values_mut().chunks_mut(panel_len).enumerate() {
        bsr_panel(a, b, br, panel);
    }
    Ok(out)
}

pub fn bsr_matmul_par(a: &BlockSparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inner(a.rows(), a.cols(), b)?;
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    let panel_len = a.block_h() * b.cols();
    out.values_mut()
        .par_chunks_mut(panel_len)
        .enumerate()
        .for_each(|(br, panel)| bsr_panel(a, b, br, panel));
    Ok(out)
}

fn csr_row(a: &CsrMatrix, b: &DenseMatrix, r: usize, out_row: &mut [f64]) {
    let rp = a.row_ptr();
    for k in rp[r]..rp[r + 1] {
        axpy_row(out_row, a.values()[k], b.row(a.col_idx()[k]));
    }
}

pub fn csr_matmul(a: &CsrMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inner(a.rows(), a.cols(), b)?;
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    let n = b.cols();
    for (r, row) in out.values_mut().chunks_mut(n).enumerate() {
        csr_row(a, b, r, row);
    }
    Ok(out)
}

pub fn csr_matmul_par(a: &CsrMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inner(a.rows(), a.cols(), b)?;
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    let n = b.cols();
    out.values_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(r, row)| csr_row(a, b, r, row));
    Ok(out)
}

/// Row-outer reference dense kernel, the baseline the sparse kernels are timed against.
pub fn dense_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inner(a.rows(), a.cols(), b)?;
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    let n = b.cols();
    for (r, row) in out.values_mut().chunks_mut(n).enumerate() {
        for (k, &v) in a.row(r).iter().enumerate() {
            axpy_row(row, v, b.row(k));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{dense_to_bsr, dense_to_csr};

    fn triple_loop(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    fn sample_b() -> DenseMatrix {
        DenseMatrix::from_fn(8, 3, |r, c| (r * 3 + c) as f64 * 0.25 - 2.0)
    }

    #[test]
    fn identity_times_b_is_b() {
        let b = sample_b();
        let a = dense_to_bsr(&DenseMatrix::identity(8), 4, 4).unwrap();
        assert_eq!(bsr_matmul(&a, &b).unwrap(), b);
        let a = dense_to_csr(&DenseMatrix::identity(8));
        assert_eq!(csr_matmul(&a, &b).unwrap(), b);
    }

    #[test]
    fn empty_operand_gives_zeros() {
        let b = sample_b();
        let a = dense_to_bsr(&DenseMatrix::zeros(4, 8), 2, 2).unwrap();
        assert_eq!(bsr_matmul(&a, &b).unwrap(), DenseMatrix::zeros(4, 3));
        let a = dense_to_csr(&DenseMatrix::zeros(4, 8));
        assert_eq!(csr_matmul(&a, &b).unwrap(), DenseMatrix::zeros(4, 3));
    }

    #[test]
    fn shape_mismatch() {
        let b = sample_b();
        let a = dense_to_bsr(&DenseMatrix::identity(4), 2, 2).unwrap();
        assert!(matches!(bsr_matmul(&a, &b), Err(Error::ShapeMismatch(_))));
        assert!(csr_matmul(&dense_to_csr(&DenseMatrix::identity(4)), &b).is_err());
    }

    #[test]
    fn parallel_kernels_bitwise_equal_sequential() {
        let a = DenseMatrix::from_fn(16, 8, |r, c| {
            if (r / 4 + c / 4) % 2 == 0 {
                ((r * 7 + c * 13) % 11) as f64 / 3.0 - 1.5
            } else {
                0.0
            }
        });
        let b = sample_b();
        let bsr = dense_to_bsr(&a, 4, 4).unwrap();
        let csr = dense_to_csr(&a);
        let seq = bsr_matmul(&bsr, &b).unwrap();
        assert_eq!(seq, bsr_matmul_par(&bsr, &b).unwrap());
        assert_eq!(csr_matmul(&csr, &b).unwrap(), csr_matmul_par(&csr, &b).unwrap());
        let oracle = triple_loop(&a, &b);
        let scale = oracle.max_abs().max(1.0);
        for (x, y) in seq.values().iter().zip(oracle.values()) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
        assert_eq!(dense_matmul(&a, &b).unwrap().shape(), (16, 3));
    }
}
