//! Hyper-parameter sweeps: one training run per grid point.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rnn::{train, TrainingConfig};

/// Config keys and the values each takes; points are their Cartesian product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepGrid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepGrid {
    /// Lines of `key=v1,v2,...`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, values) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid line {}: expected key=v1,v2", n + 1)))?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::Config(format!("grid key {} has no values", key.trim())));
            }
            axes.push((key.trim().to_string(), values));
        }
        Ok(Self { axes })
    }

    /// Every assignment, first axis varying slowest.
    pub fn points(&self) -> Vec<Vec<(String, String)>> {
        self.axes.iter().fold(vec![Vec::new()], |acc, (key, values)| {
            acc.into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// `key=value` pairs joined by `;`.
    pub point: String,
    pub block_h: usize,
    pub block_w: usize,
    pub sparsity: f64,
    pub valid_loss: f64,
    pub diverged: bool,
}

/// Trains one model per grid point on `corpus`; rows are sorted by sparsity.
/// A diverged run is recorded and the sweep moves on.
pub fn sparsity_sweep(base: &TrainingConfig, grid: &SweepGrid, corpus: &[u8]) -> Result<Vec<SweepRow>> {
    // reject a bad grid before spending time on any run
    let configs = grid
        .points()
        .into_iter()
        .map(|point| {
            let mut cfg = base.clone();
            for (k, v) in &point {
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            let label = point
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";");
            Ok((label, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(configs.len());
    for (point, cfg) in configs {
        let out = train(&cfg, corpus)?;
        rows.push(SweepRow {
            point,
            block_h: cfg.block_h,
            block_w: cfg.block_w,
            sparsity: out.report.final_block_sparsity,
            valid_loss: out.report.final_valid_loss,
            diverged: out.report.diverged.is_some(),
        });
    }
    rows.sort_by(|a, b| a.sparsity.total_cmp(&b.sparsity).then_with(|| a.point.cmp(&b.point)));
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(["point", "block_h", "block_w", "sparsity", "valid_loss", "diverged"])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_product() {
        let g = SweepGrid::parse("# sweep\nprune.theta_scale=0.5,1, 2\nblock=1x1,4x4\n").unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![("prune.theta_scale".into(), "0.5".into()), ("block".into(), "1x1".into())]);
        assert_eq!(pts[5][0].1, "2");
        assert!(SweepGrid::parse("oops").is_err());
        assert!(SweepGrid::parse("a=").is_err());
        assert_eq!(SweepGrid::parse("").unwrap().points(), vec![Vec::new()]);
    }

    #[test]
    fn bad_grid_fails_before_training() {
        let g = SweepGrid::parse("model.colour=red").unwrap();
        assert!(sparsity_sweep(&TrainingConfig::default(), &g, b"abc").is_err());
    }
}
