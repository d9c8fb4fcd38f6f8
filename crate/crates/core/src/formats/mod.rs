//! Dense, CSR and block-sparse matrices, the multiply kernels over them,
//! the index-overhead model and the `BSNN1` binary container.

mod bsr;
mod csr;
mod dense;
pub mod io;
mod kernels;
mod overhead;

pub use bsr::{bsr_to_dense, dense_to_bsr, BlockSparseMatrix};
pub use csr::{csr_to_dense, dense_to_csr, CsrMatrix};
pub use dense::{gemm, DenseMatrix, MatRef};
pub(crate) use dense::block_grid;
pub use kernels::{bsr_matmul, bsr_matmul_par, csr_matmul, csr_matmul_par, dense_matmul};
pub use overhead::{indexing_overhead, OverheadReport, CSR_INDICES_PER_UNIT};

use crate::error::Result;

/// Fraction of entries that are exactly zero.
pub fn sparsity(m: &DenseMatrix) -> f64 {
    let zeros = m.values().iter().filter(|v| **v == 0.0).count();
    zeros as f64 / m.len() as f64
}

/// Fraction of `block_h × block_w` blocks whose entries are all exactly zero.
pub fn block_sparsity(m: &DenseMatrix, block_h: usize, block_w: usize) -> Result<f64> {
    let (zero, total) = zero_block_count(m, block_h, block_w)?;
    Ok(zero as f64 / total as f64)
}

/// `(all-zero blocks, total blocks)` for a block geometry.
pub fn zero_block_count(m: &DenseMatrix, block_h: usize, block_w: usize) -> Result<(usize, usize)> {
    let (gr, gc) = m.block_grid(block_h, block_w)?;
    let mut zero = 0;
    for br in 0..gr {
        for bc in 0..gc {
            let all_zero = (0..block_h).all(|i| {
                m.row(br * block_h + i)[bc * block_w..(bc + 1) * block_w]
                    .iter()
                    .all(|&v| v == 0.0)
            });
            zero += usize::from(all_zero);
        }
    }
    Ok((zero, gr * gc))
}
