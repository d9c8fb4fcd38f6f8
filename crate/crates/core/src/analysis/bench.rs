//! Sparse-times-dense kernel benchmarks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{
    bsr_matmul, csr_matmul, dense_matmul, indexing_overhead, BlockSparseMatrix, CsrMatrix,
    DenseMatrix, CSR_INDICES_PER_UNIT,
};

/// Bits per stored value and per index in the reference kernels.
pub const VALUE_BITS: u32 = 64;
pub const INDEX_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Dense,
    Csr,
    Bsr,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Dense => "dense",
            KernelKind::Csr => "csr",
            KernelKind::Bsr => "bsr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub kernel: KernelKind,
    pub rows: usize,
    pub cols: usize,
    pub batch: usize,
    pub block_h: usize,
    pub block_w: usize,
    /// Block sparsity of the generated weight pattern.
    pub sparsity: f64,
    /// Median wall time in seconds.
    pub wall_time: f64,
    pub speedup_vs_dense: f64,
    /// Bytes of values plus indices relative to the dense value bytes.
    pub footprint_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub rows: usize,
    pub cols: usize,
    pub sparsity: f64,
    pub blocks: Vec<(usize, usize)>,
    pub batches: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rows: 1760,
            cols: 1760,
            sparsity: 0.9,
            blocks: vec![(1, 1), (4, 4), (16, 16)],
            batches: vec![1, 8, 32, 64],
            repetitions: 5,
            seed: 7,
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(KernelKind::Dense),
            "csr" => Ok(KernelKind::Csr),
            "bsr" => Ok(KernelKind::Bsr),
            _ => Err(Error::InvalidArgument(format!("unknown kernel {s:?}"))),
        }
    }
}

/// A `rows × cols` matrix with exactly `round(sparsity · blocks)` all-zero
/// blocks at seeded random positions; live entries are never zero.
pub fn random_block_sparse(
    rows: usize,
    cols: usize,
    block_h: usize,
    block_w: usize,
    sparsity: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DenseMatrix> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} outside [0, 1]")));
    }
    let mut m = DenseMatrix::zeros(rows, cols);
    let (gr, gc) = m.block_grid(block_h, block_w)?;
    let mut order: Vec<usize> = (0..gr * gc).collect();
    order.shuffle(rng);
    let dead = (sparsity * (gr * gc) as f64).round() as usize;
    let mut live = vec![false; gr * gc];
    order[dead..].iter().for_each(|&k| live[k] = true);
    for r in 0..rows {
        let row = m.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            if live[(r / block_h) * gc + c / block_w] {
                let x: f64 = rng.gen_range(0.5..1.5);
                *v = if rng.gen_bool(0.5) { x } else { -x };
            }
        }
    }
    Ok(m)
}

/// Median seconds of `reps` timed runs after one untimed warm-up.
pub fn time_median(reps: usize, mut f: impl FnMut() -> Result<DenseMatrix>) -> Result<f64> {
    f()?;
    let mut times = (0..reps)
        .map(|_| {
            let t = Instant::now();
            let out = f()?;
            let secs = t.elapsed().as_secs_f64();
            std::hint::black_box(out);
            Ok(secs.max(f64::MIN_POSITIVE))
        })
        .collect::<Result<Vec<f64>>>()?;
    times.sort_by(f64::total_cmp);
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    })
}

fn gate(name: &str, got: &DenseMatrix, oracle: &DenseMatrix) -> Result<()> {
    let scale = oracle.max_abs().max(1.0);
    let bad = got
        .values()
        .iter()
        .zip(oracle.values())
        .any(|(a, b)| (a - b).abs() > 1e-9 * scale);
    if got.shape() != oracle.shape() || bad {
        return Err(Error::InvalidStructure(format!(
            "{name} product disagrees with the dense oracle; configuration rejected"
        )));
    }
    Ok(())
}

/// Times dense, CSR and BSR products for every (block size, batch) pair.
///
/// Each configuration is checked once against the reference triple loop
/// before any timing; a mismatch aborts with an error.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchmarkRecord>> {
    if cfg.repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 repetitions, got {}",
            cfg.repetitions
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for &(bh, bw) in &cfg.blocks {
        let w = random_block_sparse(cfg.rows, cfg.cols, bh, bw, cfg.sparsity, &mut rng)?;
        let bsr = BlockSparseMatrix::from_dense(&w, bh, bw)?;
        let csr = CsrMatrix::from_dense(&w);
        let dense_values = (cfg.rows * cfg.cols) as f64;
        let bsr_ov = indexing_overhead(VALUE_BITS, INDEX_BITS, bh, bw, 2)?.overhead_ratio;
        let csr_ov =
            indexing_overhead(VALUE_BITS, INDEX_BITS, 1, 1, CSR_INDICES_PER_UNIT)?.overhead_ratio;
        let bsr_fp = (bsr.stored_blocks() * bh * bw) as f64 / dense_values * (1.0 + bsr_ov);
        let csr_fp = csr.nnz() as f64 / dense_values * (1.0 + csr_ov);
        for &batch in &cfg.batches {
            let x = DenseMatrix::from_fn(cfg.cols, batch, |_, _| rng.gen_range(-1.0..1.0));
            let oracle = dense_matmul(&w, &x)?;
            gate("dense", &w.matmul(&x)?, &oracle)?;
            gate("csr", &csr_matmul(&csr, &x)?, &oracle)?;
            gate("bsr", &bsr_matmul(&bsr, &x)?, &oracle)?;

            let baseline = time_median(cfg.repetitions, || w.matmul(&x))?;
            let timings = [
                (KernelKind::Dense, time_median(cfg.repetitions, || w.matmul(&x))?, 1.0),
                (KernelKind::Csr, time_median(cfg.repetitions, || csr_matmul(&csr, &x))?, csr_fp),
                (KernelKind::Bsr, time_median(cfg.repetitions, || bsr_matmul(&bsr, &x))?, bsr_fp),
            ];
            for (kernel, wall_time, footprint_ratio) in timings {
                out.push(BenchmarkRecord {
                    kernel,
                    rows: cfg.rows,
                    cols: cfg.cols,
                    batch,
                    block_h: bh,
                    block_w: bw,
                    sparsity: cfg.sparsity,
                    wall_time,
                    speedup_vs_dense: baseline / wall_time,
                    footprint_ratio,
                });
            }
        }
    }
    Ok(out)
}
