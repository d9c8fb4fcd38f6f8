//! Diagnostics over trained models and runs: kernel benchmarks, pruning
//! curves, fan-out histograms, per-layer sparsity and sparsity sweeps.

pub mod bench;
pub mod curve;
pub mod fanout;
pub mod sweep;

use std::io::Write;

pub use bench::{bench, random_block_sparse, BenchConfig, BenchmarkRecord, KernelKind};
pub use curve::{
    export_prune_curve, export_schedule, max_sparsity_jump, prune_curve, schedule_curve,
    CurveRow, ScheduleRow,
};
pub use fanout::{column_fanout, fanout_histogram, write_fanout_csv, FanoutHistogram};
pub use sweep::{sparsity_sweep, write_sweep_csv, SweepGrid, SweepRow};

use crate::error::Result;
use crate::rnn::{layer_sparsities, Checkpoint, LayerSparsity};

/// Per-prunable-matrix block and elementwise sparsity of a checkpoint.
pub fn layer_sparsity_report(ck: &Checkpoint) -> Result<Vec<LayerSparsity>> {
    layer_sparsities(&ck.model, ck.block_h, ck.block_w)
}

/// CSV `index,name,role,rows,cols,block_sparsity,sparsity`.
pub fn write_layer_csv<W: Write>(layers: &[LayerSparsity], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "name", "role", "rows", "cols", "block_sparsity", "sparsity"])?;
    for (i, l) in layers.iter().enumerate() {
        out.write_record([
            i.to_string(),
            l.name.clone(),
            format!("{:?}", l.role).to_lowercase(),
            l.rows.to_string(),
            l.cols.to_string(),
            l.block_sparsity.to_string(),
            l.sparsity.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes benchmark records as CSV with a header row.
pub fn write_bench_csv<W: Write>(records: &[BenchmarkRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
