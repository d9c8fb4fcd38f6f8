//! Gradual block pruning.
//!
//! A threshold ε grows monotonically from `start_itr` to `end_itr`. Every
//! `freq` iterations each prunable matrix is reduced to a grid of block
//! maxima and any live block whose maximum magnitude falls below ε is
//! killed. Dead blocks stay dead for the rest of training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::DenseMatrix;

/// Iteration bounds and update cadence of a pruning run; the slopes are attached later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningSchedule {
    pub start_itr: usize,
    pub ramp_itr: usize,
    pub end_itr: usize,
    pub freq: usize,
}

impl PruningSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_itr <= self.ramp_itr && self.ramp_itr <= self.end_itr) {
            return Err(Error::InvalidArgument(format!(
                "need start_itr <= ramp_itr <= end_itr, got {} / {} / {}",
                self.start_itr, self.ramp_itr, self.end_itr
            )));
        }
        if self.freq == 0 {
            return Err(Error::InvalidArgument("freq must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_slopes(self, start_slope: f64, ramp_slope: f64) -> Result<PruningHyperParams> {
        let hyper = PruningHyperParams {
            start_itr: self.start_itr,
            ramp_itr: self.ramp_itr,
            end_itr: self.end_itr,
            start_slope,
            ramp_slope,
            freq: self.freq,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    /// Whether ε is recomputed (and masks refreshed) at `iteration`.
    ///
    /// Updates fall on the last iteration of each `freq`-long window counted
    /// from `start_itr`, up to and including `end_itr`.
    pub fn is_update(&self, iteration: usize) -> bool {
        iteration >= self.start_itr
            && iteration <= self.end_itr
            && (iteration - self.start_itr + 1) % self.freq == 0
    }

    /// The most recent update iteration at or before `iteration`, if any.
    pub fn last_update(&self, iteration: usize) -> Option<usize> {
        if iteration < self.start_itr {
            return None;
        }
        let capped = iteration.min(self.end_itr);
        let windows = (capped - self.start_itr + 1) / self.freq;
        (windows > 0).then(|| self.start_itr + windows * self.freq - 1)
    }
}

/// Default ramp slope as a multiple of the start slope.
pub const DEFAULT_RAMP_RATIO: f64 = 1.5;

/// Default ε update interval, in iterations.
pub const DEFAULT_FREQ: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningHyperParams {
    pub start_itr: usize,
    pub ramp_itr: usize,
    pub end_itr: usize,
    /// θ: threshold growth per update before `ramp_itr`.
    pub start_slope: f64,
    /// φ: threshold growth per update from `ramp_itr` on.
    pub ramp_slope: f64,
    pub freq: usize,
}

impl PruningHyperParams {
    pub fn schedule(&self) -> PruningSchedule {
        PruningSchedule {
            start_itr: self.start_itr,
            ramp_itr: self.ramp_itr,
            end_itr: self.end_itr,
            freq: self.freq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if !(self.start_slope > 0.0 && self.start_slope.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "start slope must be positive, got {}",
                self.start_slope
            )));
        }
        if !(self.ramp_slope >= self.start_slope && self.ramp_slope.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ramp slope {} must be at least the start slope {}",
                self.ramp_slope, self.start_slope
            )));
        }
        Ok(())
    }

    /// Unquantized threshold formula evaluated at an update iteration.
    fn raw_threshold(&self, itr: usize) -> f64 {
        let freq = self.freq as f64;
        if itr < self.ramp_itr {
            self.start_slope * (itr - self.start_itr + 1) as f64 / freq
        } else {
            (self.start_slope * (self.ramp_itr - self.start_itr + 1) as f64
                + self.ramp_slope * (itr - self.ramp_itr + 1) as f64)
                / freq
        }
    }
}

/// ε at `iteration`: zero before the first update, piecewise constant between
/// updates and frozen after `end_itr`.
pub fn threshold_at(hyper: &PruningHyperParams, iteration: usize) -> f64 {
    match hyper.schedule().last_update(iteration) {
        Some(u) => hyper.raw_threshold(u),
        None => 0.0,
    }
}

/// Start slope for elementwise pruning that brings ε to `q` by `end_itr`
/// when the ramp slope is 1.5× the start slope.
pub fn start_slope_weight(
    q: f64,
    freq: usize,
    start_itr: usize,
    ramp_itr: usize,
    end_itr: usize,
) -> Result<f64> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "q must be positive, got {q}"
        )));
    }
    if start_itr > ramp_itr || ramp_itr > end_itr {
        return Err(Error::InvalidArgument(format!(
            "need start_itr <= ramp_itr <= end_itr, got {start_itr} / {ramp_itr} / {end_itr}"
        )));
    }
    let denom = 2 * (ramp_itr - start_itr) + 3 * (end_itr - ramp_itr);
    if denom == 0 {
        return Err(Error::InvalidArgument(
            "pruning window is empty (start_itr == end_itr)".into(),
        ));
    }
    Ok(2.0 * q * freq as f64 / denom as f64)
}

/// Scales an elementwise start slope by the fourth root of the block size.
pub fn start_slope_block(theta_w: f64, block_elems: usize) -> Result<f64> {
    if !(theta_w > 0.0 && theta_w.is_finite()) || block_elems == 0 {
        return Err(Error::InvalidArgument(format!(
            "need positive slope and block size, got {theta_w} and {block_elems}"
        )));
    }
    Ok(theta_w * (block_elems as f64).powf(0.25))
}

/// Nearest-rank quantile of `|w|`: the `ceil(p·n)`-th smallest magnitude.
pub fn percentile_q(weights: &[f64], target_sparsity: f64) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Empty("weights for percentile"));
    }
    if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target sparsity must lie in (0, 1), got {target_sparsity}"
        )));
    }
    let mut mags: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    // the 1e-9 absorbs representation error in p·n (0.29·100 → 29.000000000000004)
    let rank = ((target_sparsity * n as f64) - 1e-9).ceil() as usize;
    Ok(mags[rank.clamp(1, n) - 1])
}

/// Table-of-heuristics schedule: pruning starts at the second epoch, ramps
/// at 20% of training, stops at 40%, and refreshes ε every 100 iterations.
pub fn heuristic_schedule(
    total_iters: usize,
    iters_per_epoch: usize,
    total_epochs: usize,
) -> Result<PruningSchedule> {
    if total_epochs < 5 {
        return Err(Error::InvalidArgument(format!(
            "heuristic schedule needs at least 5 epochs, got {total_epochs}"
        )));
    }
    if iters_per_epoch == 0 {
        return Err(Error::InvalidArgument("epochs must contain iterations".into()));
    }
    let schedule = PruningSchedule {
        start_itr: iters_per_epoch,
        ramp_itr: total_iters * 20 / 100,
        end_itr: total_iters * 40 / 100,
        freq: DEFAULT_FREQ,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Liveness of each block of a matrix; `true` means the block is kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMask {
    block_h: usize,
    block_w: usize,
    grid_rows: usize,
    grid_cols: usize,
    kept: Vec<bool>,
}

impl BlockMask {
    pub fn all_live(rows: usize, cols: usize, block_h: usize, block_w: usize) -> Result<Self> {
        let (grid_rows, grid_cols) =
            crate::formats::block_grid(rows, cols, block_h, block_w)?;
        Ok(Self {
            block_h,
            block_w,
            grid_rows,
            grid_cols,
            kept: vec![true; grid_rows * grid_cols],
        })
    }

    pub fn from_kept(
        grid_rows: usize,
        grid_cols: usize,
        block_h: usize,
        block_w: usize,
        kept: Vec<bool>,
    ) -> Result<Self> {
        if kept.len() != grid_rows * grid_cols || block_h == 0 || block_w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} mask entries for a {grid_rows}x{grid_cols} grid",
                kept.len()
            )));
        }
        Ok(Self {
            block_h,
            block_w,
            grid_rows,
            grid_cols,
            kept,
        })
    }

    pub fn block_h(&self) -> usize {
        self.block_h
    }

    pub fn block_w(&self) -> usize {
        self.block_w
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn is_kept(&self, br: usize, bc: usize) -> bool {
        self.kept[br * self.grid_cols + bc]
    }

    pub fn total_blocks(&self) -> usize {
        self.kept.len()
    }

    pub fn dead_blocks(&self) -> usize {
        self.kept.iter().filter(|k| !**k).count()
    }

    pub fn dead_fraction(&self) -> f64 {
        self.dead_blocks() as f64 / self.total_blocks() as f64
    }

    /// True when every block dead in `self` is also dead in `later`.
    pub fn dead_subset_of(&self, later: &BlockMask) -> bool {
        self.kept.len() == later.kept.len()
            && self.kept.iter().zip(&later.kept).all(|(a, b)| *a || !*b)
    }

    fn check_shape(&self, m: &DenseMatrix) -> Result<()> {
        if m.rows() != self.grid_rows * self.block_h || m.cols() != self.grid_cols * self.block_w
        {
            return Err(Error::ShapeMismatch(format!(
                "mask covers {}x{} but matrix is {}x{}",
                self.grid_rows * self.block_h,
                self.grid_cols * self.block_w,
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }

    /// Kills live blocks whose max magnitude is strictly below `epsilon`.
    pub fn update(&mut self, weights: &DenseMatrix, epsilon: f64) -> Result<()> {
        self.check_shape(weights)?;
        let maxima = block_reduce_max(weights, self.block_h, self.block_w)?;
        for (kept, max) in self.kept.iter_mut().zip(maxima.values()) {
            if *kept && *max < epsilon {
                *kept = false;
            }
        }
        Ok(())
    }

    /// Zeroes every element inside a dead block.
    pub fn apply_in_place(&self, m: &mut DenseMatrix) -> Result<()> {
        self.check_shape(m)?;
        if self.kept.iter().all(|k| *k) {
            return Ok(());
        }
        for br in 0..self.grid_rows {
            for i in 0..self.block_h {
                let row = m.row_mut(br * self.block_h + i);
                for bc in 0..self.grid_cols {
                    if !self.kept[br * self.grid_cols + bc] {
                        row[bc * self.block_w..(bc + 1) * self.block_w].fill(0.0);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Grid of per-block maximum magnitudes.
pub fn block_reduce_max(weights: &DenseMatrix, block_h: usize, block_w: usize) -> Result<DenseMatrix> {
    let (gr, gc) = weights.block_grid(block_h, block_w)?;
    let mut out = DenseMatrix::zeros(gr, gc);
    for r in 0..weights.rows() {
        let br = r / block_h;
        let row = weights.row(r);
        let out_row = out.row_mut(br);
        for (bc, chunk) in row.chunks(block_w).enumerate() {
            let m = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m > out_row[bc] {
                out_row[bc] = m;
            }
        }
    }
    Ok(out)
}

pub fn update_mask(mask: &BlockMask, weights: &DenseMatrix, epsilon: f64) -> Result<BlockMask> {
    let mut next = mask.clone();
    next.update(weights, epsilon)?;
    Ok(next)
}

pub fn apply_mask(weights: &DenseMatrix, mask: &BlockMask) -> Result<DenseMatrix> {
    let mut out = weights.clone();
    mask.apply_in_place(&mut out)?;
    Ok(out)
}

/// Mask behaviour the training loop relies on; [`BlockMask`] is the
/// production implementation.
pub trait MaskPolicy: Clone {
    /// Refresh liveness from the current weights and threshold.
    fn refresh(&mut self, weights: &DenseMatrix, epsilon: f64) -> Result<()>;
    /// Zero the dead entries of a weight-shaped matrix.
    fn mask(&self, m: &mut DenseMatrix) -> Result<()>;
}

impl MaskPolicy for BlockMask {
    fn refresh(&mut self, weights: &DenseMatrix, epsilon: f64) -> Result<()> {
        self.update(weights, epsilon)
    }

    fn mask(&self, m: &mut DenseMatrix) -> Result<()> {
        self.apply_in_place(m)
    }
}

/// Threshold schedule plus the masks of every matrix it governs.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningState<M = BlockMask> {
    pub hyper: PruningHyperParams,
    pub epsilon: f64,
    pub iteration: usize,
    pub masks: Vec<M>,
}

impl<M: MaskPolicy> PruningState<M> {
    pub fn new(hyper: PruningHyperParams, masks: Vec<M>) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            epsilon: 0.0,
            iteration: 0,
            masks,
        })
    }

    /// Moves to `iteration`; on an update iteration recomputes ε and refreshes
    /// the masks against `weights` (one per mask, same order). Returns whether
    /// an update happened.
    pub fn advance(&mut self, iteration: usize, weights: &[&DenseMatrix]) -> Result<bool> {
        if weights.len() != self.masks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight matrices for {} masks",
                weights.len(),
                self.masks.len()
            )));
        }
        self.iteration = iteration;
        if !self.hyper.schedule().is_update(iteration) {
            return Ok(false);
        }
        self.epsilon = threshold_at(&self.hyper, iteration);
        for (mask, w) in self.masks.iter_mut().zip(weights) {
            mask.refresh(w, self.epsilon)?;
        }
        Ok(true)
    }
}
