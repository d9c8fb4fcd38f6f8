use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::io::Dtype;
use crate::pruning::{DEFAULT_FREQ, DEFAULT_RAMP_RATIO};
use crate::regularizers::{RegularizerConfig, RegularizerKind};
use crate::rnn::model::CellKind;

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    pub enabled: bool,
    /// Percentile of |w| that sets q (0.9 aims at 90% sparsity).
    pub target: f64,
    /// Explicit schedule bounds; any left unset come from the heuristic schedule.
    pub start_itr: Option<usize>,
    pub ramp_itr: Option<usize>,
    pub end_itr: Option<usize>,
    pub freq: usize,
    /// Explicit start slope, bypassing q and the slope formulas.
    pub theta: Option<f64>,
    /// Multiplier on the derived start slope (sweeps).
    pub theta_scale: f64,
    /// ramp slope / start slope.
    pub ramp_ratio: f64,
    /// Dense checkpoint to take q from instead of the live weights.
    pub warm_checkpoint: Option<PathBuf>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            target: 0.9,
            start_itr: None,
            ramp_itr: None,
            end_itr: None,
            freq: DEFAULT_FREQ,
            theta: None,
            theta_scale: 1.0,
            ramp_ratio: DEFAULT_RAMP_RATIO,
            warm_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: usize,
    pub data_path: Option<PathBuf>,
    pub valid_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seq_len: usize,
    pub seed: u64,
    /// Global-norm gradient clip; 0 disables.
    pub clip: f64,
    pub block_h: usize,
    pub block_w: usize,
    pub prune: PruneConfig,
    /// `active_until = None` resolves to the pruning end iteration at train
    /// time. The group shape comes from [`TrainingConfig::regularizer`].
    pub reg: RegularizerConfig,
    /// Explicit regularizer group shape; `None` follows the pruning block.
    pub reg_block: Option<(usize, usize)>,
    /// After training, zero the lowest-norm blocks until this global block
    /// sparsity is reached (used to read a sparse model off a group-lasso run).
    pub final_sparsity: Option<f64>,
    pub checkpoint_dtype: Dtype,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden: 64,
            layers: 1,
            data_path: None,
            valid_fraction: 0.1,
            epochs: 25,
            lr: 0.3,
            lr_decay: 1.0,
            momentum: 0.9,
            batch: 16,
            seq_len: 64,
            seed: 1,
            clip: 5.0,
            block_h: 4,
            block_w: 4,
            prune: PruneConfig::default(),
            reg: RegularizerConfig::default(),
            reg_block: None,
            final_sparsity: None,
            checkpoint_dtype: Dtype::F64,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Parses `HxW` (or a single `N` for square blocks).
pub fn parse_block(value: &str) -> Result<(usize, usize)> {
    let (h, w) = value.split_once(['x', 'X']).unwrap_or((value, value));
    let h: usize = parse("block", h.trim())?;
    let w: usize = parse("block", w.trim())?;
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("block {value:?} must be positive")));
    }
    Ok((h, w))
}

impl TrainingConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = Self::parse(&text)?;
        // relative paths resolve against the config's directory
        if let Some(dir) = path.as_ref().parent() {
            for p in [&mut cfg.data_path, &mut cfg.prune.warm_checkpoint].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.kind" => self.cell = parse(key, value)?,
            "model.hidden" => self.hidden = parse(key, value)?,
            "model.layers" => self.layers = parse(key, value)?,
            "data.path" => self.data_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data.valid_fraction" => self.valid_fraction = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.lr" => self.lr = parse(key, value)?,
            "train.lr_decay" => self.lr_decay = parse(key, value)?,
            "train.momentum" => self.momentum = parse(key, value)?,
            "train.batch" => self.batch = parse(key, value)?,
            "train.seq_len" => self.seq_len = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.clip" => self.clip = parse(key, value)?,
            "block.h" => self.block_h = parse(key, value)?,
            "block.w" => self.block_w = parse(key, value)?,
            "block" => {
                let (h, w) = parse_block(value)?;
                self.block_h = h;
                self.block_w = w;
            }
            "prune.enabled" => self.prune.enabled = parse_bool(key, value)?,
            "prune.target" => self.prune.target = parse(key, value)?,
            "prune.start_itr" => self.prune.start_itr = parse_opt(key, value)?,
            "prune.ramp_itr" => self.prune.ramp_itr = parse_opt(key, value)?,
            "prune.end_itr" => self.prune.end_itr = parse_opt(key, value)?,
            "prune.freq" => self.prune.freq = parse(key, value)?,
            "prune.theta" => self.prune.theta = parse_opt(key, value)?,
            "prune.theta_scale" => self.prune.theta_scale = parse(key, value)?,
            "prune.ramp_ratio" => self.prune.ramp_ratio = parse(key, value)?,
            "prune.warm_checkpoint" => {
                self.prune.warm_checkpoint = (!value.is_empty()).then(|| PathBuf::from(value))
            }
            "reg.kind" => self.reg.kind = parse::<RegularizerKind>(key, value)?,
            "reg.lambda" => self.reg.lambda = parse(key, value)?,
            "reg.block" => {
                self.reg_block = match value {
                    "" | "auto" => None,
                    v => Some(parse_block(v)?),
                }
            }
            "reg.active_until" => self.reg.active_until = parse_opt(key, value)?,
            "reg.final_sparsity" => self.final_sparsity = parse_opt(key, value)?,
            "checkpoint.dtype" => self.checkpoint_dtype = value.parse()?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 || self.layers == 0 {
            return fail("model.hidden and model.layers must be positive".into());
        }
        if self.epochs < 5 {
            return fail(format!("train.epochs must be at least 5, got {}", self.epochs));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("train.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return fail("train.lr and train.lr_decay must be positive".into());
        }
        if self.batch == 0 || self.seq_len == 0 {
            return fail("train.batch and train.seq_len must be positive".into());
        }
        if self.block_h == 0 || self.block_w == 0 {
            return fail("block dimensions must be positive".into());
        }
        if self.prune.freq == 0 {
            return fail("prune.freq must be at least 1".into());
        }
        if !(self.prune.target > 0.0 && self.prune.target < 1.0) {
            return fail(format!("prune.target must lie in (0, 1), got {}", self.prune.target));
        }
        if !(self.prune.theta_scale > 0.0) || self.prune.ramp_ratio < 1.0 {
            return fail("prune.theta_scale must be positive and prune.ramp_ratio >= 1".into());
        }
        if let Some(s) = self.final_sparsity {
            if !(0.0..1.0).contains(&s) {
                return fail(format!("reg.final_sparsity must lie in [0, 1), got {s}"));
            }
        }
        self.regularizer().validate()
    }

    /// Canonical `key=value` text: every key, fixed order.
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("model.kind", self.cell.to_string());
        kv("model.hidden", self.hidden.to_string());
        kv("model.layers", self.layers.to_string());
        kv(
            "data.path",
            self.data_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("data.valid_fraction", self.valid_fraction.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.lr", self.lr.to_string());
        kv("train.lr_decay", self.lr_decay.to_string());
        kv("train.momentum", self.momentum.to_string());
        kv("train.batch", self.batch.to_string());
        kv("train.seq_len", self.seq_len.to_string());
        kv("train.seed", self.seed.to_string());
        kv("train.clip", self.clip.to_string());
        kv("block.h", self.block_h.to_string());
        kv("block.w", self.block_w.to_string());
        kv("prune.enabled", self.prune.enabled.to_string());
        kv("prune.target", self.prune.target.to_string());
        kv("prune.start_itr", opt(self.prune.start_itr.map(|v| v.to_string())));
        kv("prune.ramp_itr", opt(self.prune.ramp_itr.map(|v| v.to_string())));
        kv("prune.end_itr", opt(self.prune.end_itr.map(|v| v.to_string())));
        kv("prune.freq", self.prune.freq.to_string());
        kv("prune.theta", opt(self.prune.theta.map(|v| v.to_string())));
        kv("prune.theta_scale", self.prune.theta_scale.to_string());
        kv("prune.ramp_ratio", self.prune.ramp_ratio.to_string());
        kv(
            "prune.warm_checkpoint",
            self.prune
                .warm_checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("reg.kind", self.reg.kind.to_string());
        kv("reg.lambda", self.reg.lambda.to_string());
        kv(
            "reg.block",
            self.reg_block.map_or("auto".into(), |(h, w)| format!("{h}x{w}")),
        );
        kv("reg.active_until", opt(self.reg.active_until.map(|v| v.to_string())));
        kv("reg.final_sparsity", opt(self.final_sparsity.map(|v| v.to_string())));
        kv("checkpoint.dtype", self.checkpoint_dtype.to_string());
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// The regularizer as training applies it, with the group shape resolved.
    pub fn regularizer(&self) -> RegularizerConfig {
        let (block_h, block_w) = self.reg_block.unwrap_or((self.block_h, self.block_w));
        RegularizerConfig {
            block_h,
            block_w,
            ..self.reg
        }
    }

    /// Vocabulary alignment that keeps vocab-sized dimensions block-divisible.
    pub fn vocab_alignment(&self) -> usize {
        let reg = self.regularizer();
        [self.block_h, self.block_w, reg.block_h, reg.block_w]
            .into_iter()
            .fold(1, lcm)
    }
}

impl fmt::Display for TrainingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# desk run
model.kind=gru
model.hidden=32
model.layers=2
data.path=corpus.txt
train.epochs=6
train.lr=0.2
train.momentum=0.5
train.seed=9
prune.enabled=true
prune.freq=50
reg.kind=group_lasso
reg.lambda=1e-4
block.h=4
block.w=2
";

    #[test]
    fn parses_and_propagates_block_to_reg() {
        let cfg = TrainingConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.cell, CellKind::Gru);
        assert_eq!((cfg.hidden, cfg.layers, cfg.epochs), (32, 2, 6));
        assert_eq!((cfg.block_h, cfg.block_w), (4, 2));
        assert_eq!((cfg.regularizer().block_h, cfg.regularizer().block_w), (4, 2));
        assert_eq!(cfg.reg.kind, RegularizerKind::GroupLasso);
        assert_eq!(cfg.prune.freq, 50);
        assert!(cfg.prune.enabled);
        assert_eq!(cfg.vocab_alignment(), 4);
    }

    #[test]
    fn canonical_text_roundtrips() {
        let cfg = TrainingConfig::parse(SAMPLE).unwrap();
        let again = TrainingConfig::parse(&cfg.to_kv()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainingConfig::parse("model.colour=red").is_err());
        assert!(TrainingConfig::parse("train.epochs=4").is_err());
        assert!(TrainingConfig::parse("train.momentum=1.0").is_err());
        assert!(TrainingConfig::parse("no equals sign").is_err());
        assert!(TrainingConfig::parse("model.kind=lstm").is_err());
        assert!(TrainingConfig::parse("reg.lambda=-1").is_err());
    }

    #[test]
    fn block_syntax() {
        assert_eq!(parse_block("12x2").unwrap(), (12, 2));
        assert_eq!(parse_block("8").unwrap(), (8, 8));
        assert!(parse_block("0x4").is_err());
        let cfg = TrainingConfig::parse("block=12x2\nreg.block=4x4").unwrap();
        assert_eq!((cfg.block_h, cfg.block_w), (12, 2));
        assert_eq!((cfg.regularizer().block_h, cfg.regularizer().block_w), (4, 4));
        assert_eq!(cfg.vocab_alignment(), 12);
        // set() follows the same rule in any order
        let mut cfg = TrainingConfig::default();
        cfg.set("reg.kind", "group_lasso").unwrap();
        cfg.set("block.h", "8").unwrap();
        assert_eq!((cfg.regularizer().block_h, cfg.regularizer().block_w), (8, 4));
        cfg.set("reg.block", "2x2").unwrap();
        cfg.set("block", "16x16").unwrap();
        assert_eq!((cfg.regularizer().block_h, cfg.regularizer().block_w), (2, 2));
    }
}
