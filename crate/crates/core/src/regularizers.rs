//! Sparsity-inducing penalties on prunable weight matrices.
//!
//! Group lasso sums the ℓ2 norms of `block_h × block_w` groups; ℓ1 and ℓ1/2
//! act elementwise. Gradients use the minimum-norm subgradient at the
//! non-differentiable points: `sgn(0) = 0` and a zero-norm group gets a zero
//! gradient. Dead (all-zero) blocks therefore contribute nothing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::DenseMatrix;

/// Lower clamp on `|w|` in the ℓ1/2 gradient.
pub const L_HALF_DELTA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    GroupLasso,
    L1,
    LHalf,
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegularizerKind::None => "none",
            RegularizerKind::GroupLasso => "group_lasso",
            RegularizerKind::L1 => "l1",
            RegularizerKind::LHalf => "l_half",
        })
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegularizerKind::None),
            "group_lasso" | "gl" => Ok(RegularizerKind::GroupLasso),
            "l1" => Ok(RegularizerKind::L1),
            "l_half" | "l1/2" => Ok(RegularizerKind::LHalf),
            other => Err(Error::Config(format!("unknown regularizer kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    pub lambda: f64,
    pub block_h: usize,
    pub block_w: usize,
    /// Last iteration at which the penalty is applied; `None` means always.
    pub active_until: Option<usize>,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            lambda: 0.0,
            block_h: 1,
            block_w: 1,
            active_until: None,
        }
    }
}

impl RegularizerConfig {
    pub fn group_lasso(lambda: f64, block_h: usize, block_w: usize) -> Self {
        Self {
            kind: RegularizerKind::GroupLasso,
            lambda,
            block_h,
            block_w,
            active_until: None,
        }
    }

    pub fn l1(lambda: f64) -> Self {
        Self {
            kind: RegularizerKind::L1,
            lambda,
            ..Self::default()
        }
    }

    pub fn l_half(lambda: f64) -> Self {
        Self {
            kind: RegularizerKind::LHalf,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "regularizer lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.block_h == 0 || self.block_w == 0 {
            return Err(Error::Config("regularizer block must be positive".into()));
        }
        Ok(())
    }
}

fn expect_kind(cfg: &RegularizerConfig, kind: RegularizerKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "expected a {kind} regularizer config, got {}",
            cfg.kind
        )));
    }
    Ok(())
}

/// Per-group ℓ2 norms over the block grid, row-major.
fn group_norms(weights: &DenseMatrix, bh: usize, bw: usize) -> Result<(usize, Vec<f64>)> {
    let (gr, gc) = weights.block_grid(bh, bw)?;
    let mut sq = vec![0.0; gr * gc];
    for r in 0..weights.rows() {
        let base = (r / bh) * gc;
        for (bc, chunk) in weights.row(r).chunks(bw).enumerate() {
            sq[base + bc] += chunk.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok((gc, sq.into_iter().map(f64::sqrt).collect()))
}

pub fn group_lasso_loss(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<f64> {
    expect_kind(cfg, RegularizerKind::GroupLasso)?;
    let (_, norms) = group_norms(weights, cfg.block_h, cfg.block_w)?;
    Ok(cfg.lambda * norms.iter().sum::<f64>())
}

pub fn group_lasso_grad(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<DenseMatrix> {
    expect_kind(cfg, RegularizerKind::GroupLasso)?;
    let (bh, bw) = (cfg.block_h, cfg.block_w);
    let (gc, norms) = group_norms(weights, bh, bw)?;
    let mut g = DenseMatrix::zeros(weights.rows(), weights.cols());
    for r in 0..weights.rows() {
        let base = (r / bh) * gc;
        let src = weights.row(r);
        let dst = g.row_mut(r);
        for bc in 0..gc {
            let norm = norms[base + bc];
            if norm > 0.0 {
                for c in bc * bw..(bc + 1) * bw {
                    dst[c] = cfg.lambda * src[c] / norm;
                }
            }
        }
    }
    Ok(g)
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l1_loss(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<f64> {
    expect_kind(cfg, RegularizerKind::L1)?;
    Ok(cfg.lambda * weights.values().iter().map(|w| w.abs()).sum::<f64>())
}

pub fn l1_grad(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<DenseMatrix> {
    expect_kind(cfg, RegularizerKind::L1)?;
    let mut g = weights.clone();
    g.values_mut()
        .iter_mut()
        .for_each(|w| *w = cfg.lambda * sgn(*w));
    Ok(g)
}

pub fn l_half_loss(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<f64> {
    expect_kind(cfg, RegularizerKind::LHalf)?;
    Ok(cfg.lambda * weights.values().iter().map(|w| w.abs().sqrt()).sum::<f64>())
}

pub fn l_half_grad(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<DenseMatrix> {
    expect_kind(cfg, RegularizerKind::LHalf)?;
    let mut g = weights.clone();
    g.values_mut().iter_mut().for_each(|w| {
        *w = cfg.lambda * 0.5 / w.abs().max(L_HALF_DELTA).sqrt() * sgn(*w);
    });
    Ok(g)
}

/// Penalty value for whichever kind `cfg` selects; zero for `none`.
pub fn penalty(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<f64> {
    match cfg.kind {
        RegularizerKind::None => Ok(0.0),
        RegularizerKind::GroupLasso => group_lasso_loss(weights, cfg),
        RegularizerKind::L1 => l1_loss(weights, cfg),
        RegularizerKind::LHalf => l_half_loss(weights, cfg),
    }
}

/// Penalty gradient for whichever kind `cfg` selects; zero for `none`.
pub fn penalty_grad(weights: &DenseMatrix, cfg: &RegularizerConfig) -> Result<DenseMatrix> {
    match cfg.kind {
        RegularizerKind::None => Ok(DenseMatrix::zeros(weights.rows(), weights.cols())),
        RegularizerKind::GroupLasso => group_lasso_grad(weights, cfg),
        RegularizerKind::L1 => l1_grad(weights, cfg),
        RegularizerKind::LHalf => l_half_grad(weights, cfg),
    }
}

/// Inclusive: the penalty still applies at `active_until` itself.
pub fn regularizer_active(cfg: &RegularizerConfig, iteration: usize) -> bool {
    cfg.kind != RegularizerKind::None && cfg.active_until.is_none_or(|end| iteration <= end)
}

/// Proximal gradient descent on `½‖w − a‖² + λ‖w‖₂` for a single group,
/// starting from `a`: a gradient step of size `lr` on the quadratic, then the
/// group soft-threshold `w · max(0, 1 − lr·λ/‖w‖)`. The threshold is what
/// lands the group on exact zero once λ ≥ ‖a‖; entries whose magnitude ends
/// below `zero_tol` are reported as zeros.
pub fn group_lasso_least_squares(
    target: &[f64],
    lambda: f64,
    steps: usize,
    lr: f64,
    zero_tol: f64,
) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::Empty("least-squares target"));
    }
    if !(lr > 0.0 && lr <= 1.0) || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 < lr <= 1 and lambda >= 0, got lr {lr}, lambda {lambda}"
        )));
    }
    let mut w = target.to_vec();
    for _ in 0..steps {
        for (v, a) in w.iter_mut().zip(target) {
            *v -= lr * (*v - a);
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let keep = if norm > 0.0 { (1.0 - lr * lambda / norm).max(0.0) } else { 0.0 };
        w.iter_mut().for_each(|v| *v *= keep);
    }
    for v in &mut w {
        if v.abs() < zero_tol {
            *v = 0.0;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five_group() {
        let w = DenseMatrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        let cfg = RegularizerConfig::group_lasso(0.5, 1, 2);
        assert_eq!(group_lasso_loss(&w, &cfg).unwrap(), 2.5);
        let g = group_lasso_grad(&w, &cfg).unwrap();
        assert!((g.values()[0] - 0.3).abs() < 1e-15);
        assert!((g.values()[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero_penalty_and_gradient() {
        let z = DenseMatrix::zeros(4, 4);
        for cfg in [
            RegularizerConfig::group_lasso(0.7, 2, 2),
            RegularizerConfig::l1(0.7),
            RegularizerConfig::l_half(0.7),
        ] {
            assert_eq!(penalty(&z, &cfg).unwrap(), 0.0);
            assert_eq!(penalty_grad(&z, &cfg).unwrap(), z);
        }
    }

    #[test]
    fn l1_definition() {
        let w = DenseMatrix::new(1, 2, vec![-2.0, 0.5]).unwrap();
        let cfg = RegularizerConfig::l1(0.1);
        assert!((l1_loss(&w, &cfg).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(l1_grad(&w, &cfg).unwrap().values(), &[-0.1, 0.1]);
    }

    #[test]
    fn l_half_definition() {
        let cfg = RegularizerConfig::l_half(1.0);
        let w = DenseMatrix::new(1, 2, vec![4.0, 0.0]).unwrap();
        assert_eq!(l_half_loss(&w, &cfg).unwrap(), 2.0);
        assert_eq!(l_half_grad(&w, &cfg).unwrap().values(), &[0.25, 0.0]);
        let small = DenseMatrix::new(1, 2, vec![0.01, -1.0]).unwrap();
        let g = l_half_grad(&small, &cfg).unwrap();
        assert!((g.values()[0] - 5.0).abs() < 1e-12);
        assert!((g.values()[1] + 0.5).abs() < 1e-15);
        // the clamp bounds the gradient next to zero
        let tiny = DenseMatrix::new(1, 1, vec![1e-300]).unwrap();
        assert!((l_half_grad(&tiny, &cfg).unwrap().values()[0] - 0.5e4).abs() < 1e-6);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let w = DenseMatrix::zeros(2, 2);
        assert!(group_lasso_loss(&w, &RegularizerConfig::l1(1.0)).is_err());
        assert!(l1_grad(&w, &RegularizerConfig::l_half(1.0)).is_err());
        let cfg = RegularizerConfig::group_lasso(1.0, 3, 2);
        assert!(matches!(
            group_lasso_loss(&w, &cfg),
            Err(Error::NotDivisible { .. })
        ));
    }

    #[test]
    fn active_window_is_inclusive() {
        let mut cfg = RegularizerConfig::l1(1.0);
        cfg.active_until = Some(10000);
        assert!(regularizer_active(&cfg, 0));
        assert!(regularizer_active(&cfg, 10000));
        assert!(!regularizer_active(&cfg, 10001));
        assert!(!regularizer_active(&RegularizerConfig::default(), 0));
    }

    #[test]
    fn kind_parsing() {
        for k in [
            RegularizerKind::None,
            RegularizerKind::GroupLasso,
            RegularizerKind::L1,
            RegularizerKind::LHalf,
        ] {
            assert_eq!(k.to_string().parse::<RegularizerKind>().unwrap(), k);
        }
        assert!("l2".parse::<RegularizerKind>().is_err());
    }
}
