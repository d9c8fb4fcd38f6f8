//! Pruning-schedule curves from run reports and from hyper-parameters alone.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::pruning::{threshold_at, PruningHyperParams};
use crate::rnn::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub epsilon_recurrent: f64,
    pub epsilon_linear: f64,
    pub block_sparsity: f64,
}

pub fn prune_curve(report: &RunReport) -> Vec<CurveRow> {
    report
        .records
        .iter()
        .map(|r| CurveRow {
            iteration: r.iteration,
            epsilon_recurrent: r.epsilon_recurrent,
            epsilon_linear: r.epsilon_linear,
            block_sparsity: r.block_sparsity,
        })
        .collect()
}

fn write_rows<W: Write, T: Serialize>(w: W, header: &[&str], rows: &[T]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// CSV `iteration,epsilon_recurrent,epsilon_linear,block_sparsity`, one row per record.
pub fn export_prune_curve<W: Write>(report: &RunReport, w: W) -> Result<()> {
    write_rows(
        w,
        &["iteration", "epsilon_recurrent", "epsilon_linear", "block_sparsity"],
        &prune_curve(report),
    )
}

/// Largest single-step increase of the sparsity column.
pub fn max_sparsity_jump(report: &RunReport) -> f64 {
    report
        .records
        .windows(2)
        .map(|p| p[1].block_sparsity - p[0].block_sparsity)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub iteration: usize,
    pub epsilon_recurrent: f64,
    pub epsilon_linear: f64,
}

/// ε for iterations `0..total_iters` from the per-kind hyper-parameters.
pub fn schedule_curve(
    recurrent: &PruningHyperParams,
    linear: &PruningHyperParams,
    total_iters: usize,
) -> Vec<ScheduleRow> {
    (0..total_iters)
        .map(|it| ScheduleRow {
            iteration: it,
            epsilon_recurrent: threshold_at(recurrent, it),
            epsilon_linear: threshold_at(linear, it),
        })
        .collect()
}

pub fn export_schedule<W: Write>(rows: &[ScheduleRow], w: W) -> Result<()> {
    write_rows(w, &["iteration", "epsilon_recurrent", "epsilon_linear"], rows)
}
