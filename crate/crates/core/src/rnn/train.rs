//! The training loop: truncated BPTT with Nesterov momentum, gradual block
//! pruning and optional structured regularization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{sparsity, zero_block_count, DenseMatrix};
use crate::pruning::{
    heuristic_schedule, percentile_q, start_slope_block, start_slope_weight, BlockMask,
    MaskPolicy, PruningHyperParams, PruningSchedule, PruningState,
};
use crate::regularizers::RegularizerConfig;
use crate::rnn::backprop::forward_backward;
use crate::rnn::config::TrainingConfig;
use crate::rnn::data::{split_corpus, StreamBatcher, Vocab};
use crate::rnn::infer::evaluate;
use crate::rnn::model::{ParamRole, RecurrentModel};
use crate::rnn::optim::{clip_global_norm, NesterovMomentum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    /// Threshold applied to recurrent matrices.
    pub epsilon_recurrent: f64,
    /// Threshold applied to input and output matrices.
    pub epsilon_linear: f64,
    /// Fraction of all-zero blocks over every prunable matrix.
    pub block_sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub name: String,
    pub role: ParamRole,
    pub rows: usize,
    pub cols: usize,
    pub block_sparsity: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub block_h: usize,
    pub block_w: usize,
    pub iters_per_epoch: usize,
    pub total_iters: usize,
    pub schedule: Option<PruningSchedule>,
    pub hyper_recurrent: Option<PruningHyperParams>,
    pub hyper_linear: Option<PruningHyperParams>,
    pub records: Vec<IterationRecord>,
    /// Held-out loss after each completed epoch.
    pub valid_loss: Vec<f64>,
    pub final_valid_loss: f64,
    pub final_block_sparsity: f64,
    pub param_count: usize,
    pub nonzero_count: usize,
    pub layers: Vec<LayerSparsity>,
    pub diverged: Option<Divergence>,
    pub checkpoint: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Everything a run produces; `model` is the last good model when the run diverged.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M = BlockMask> {
    pub model: RecurrentModel,
    pub vocab: Vocab,
    /// One mask per prunable matrix, in [`RecurrentModel::prunable`] order.
    pub masks: Vec<M>,
    pub report: RunReport,
}

impl<M> TrainOutcome<M> {
    /// Turns a recorded divergence into an error.
    pub fn check(&self) -> Result<()> {
        match self.report.diverged {
            Some(d) => Err(Error::Diverged {
                iteration: d.iteration,
                loss: d.loss,
            }),
            None => Ok(()),
        }
    }
}

/// Global block sparsity over the prunable matrices.
pub fn model_block_sparsity(model: &RecurrentModel, block_h: usize, block_w: usize) -> Result<f64> {
    let (mut zero, mut total) = (0, 0);
    for i in model.prunable() {
        let (z, t) = zero_block_count(&model.params()[i], block_h, block_w)?;
        zero += z;
        total += t;
    }
    Ok(zero as f64 / total.max(1) as f64)
}

pub fn layer_sparsities(
    model: &RecurrentModel,
    block_h: usize,
    block_w: usize,
) -> Result<Vec<LayerSparsity>> {
    model
        .prunable()
        .into_iter()
        .map(|i| {
            let p = &model.params()[i];
            let (z, t) = zero_block_count(p, block_h, block_w)?;
            Ok(LayerSparsity {
                name: model.names()[i].clone(),
                role: model.roles()[i],
                rows: p.rows(),
                cols: p.cols(),
                block_sparsity: z as f64 / t as f64,
                sparsity: sparsity(p),
            })
        })
        .collect()
}

/// Reads the corpus named by `data.path`.
pub fn load_corpus(cfg: &TrainingConfig) -> Result<Vec<u8>> {
    let path = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| Error::Config("data.path is not set".into()))?;
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    Ok(bytes)
}

/// Trains with block masks, then applies `reg.final_sparsity` if set.
pub fn train(cfg: &TrainingConfig, corpus: &[u8]) -> Result<TrainOutcome> {
    let (bh, bw) = (cfg.block_h, cfg.block_w);
    let mut out = train_with(cfg, corpus, |w| BlockMask::all_live(w.rows(), w.cols(), bh, bw))?;
    if let Some(target) = cfg.final_sparsity {
        if out.report.diverged.is_none() {
            prune_to_sparsity(&mut out.model, &mut out.masks, target)?;
            finish_report(&mut out.report, &out.model, cfg, None)?;
            out.report.final_valid_loss = valid_loss(&out.model, &out.vocab, corpus, cfg)?;
        }
    }
    Ok(out)
}

/// Zeroes the globally lowest-norm live blocks until `target` of all blocks are dead.
pub fn prune_to_sparsity(
    model: &mut RecurrentModel,
    masks: &mut [BlockMask],
    target: f64,
) -> Result<()> {
    let prunable = model.prunable();
    if masks.len() != prunable.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for {} prunable matrices",
            masks.len(),
            prunable.len()
        )));
    }
    // (norm, matrix, block) for every live block
    let mut live = Vec::new();
    let mut total = 0;
    let mut dead = 0;
    for (m, (&pi, mask)) in prunable.iter().zip(masks.iter()).enumerate() {
        let w = &model.params()[pi];
        let (gr, gc) = mask.grid();
        let (bh, bw) = (mask.block_h(), mask.block_w());
        total += gr * gc;
        for br in 0..gr {
            for bc in 0..gc {
                if !mask.is_kept(br, bc) {
                    dead += 1;
                    continue;
                }
                let norm: f64 = (0..bh)
                    .flat_map(|i| &w.row(br * bh + i)[bc * bw..(bc + 1) * bw])
                    .map(|v| v * v)
                    .sum();
                live.push((norm, m, br * gc + bc));
            }
        }
    }
    let want = (target * total as f64).round() as usize;
    let cut = want.saturating_sub(dead).min(live.len());
    live.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut kept: Vec<Vec<bool>> = masks.iter().map(|m| m.kept().to_vec()).collect();
    for &(_, m, k) in &live[..cut] {
        kept[m][k] = false;
    }
    for ((mask, kept), &pi) in masks.iter_mut().zip(kept).zip(&prunable) {
        let (gr, gc) = mask.grid();
        *mask = BlockMask::from_kept(gr, gc, mask.block_h(), mask.block_w(), kept)?;
        mask.apply_in_place(&mut model.params_mut()[pi])?;
    }
    Ok(())
}

fn valid_loss(model: &RecurrentModel, vocab: &Vocab, corpus: &[u8], cfg: &TrainingConfig) -> Result<f64> {
    let (_, valid) = split_corpus(corpus, cfg.valid_fraction)?;
    if valid.is_empty() {
        return Ok(f64::NAN);
    }
    evaluate(model, &vocab.encode(valid))
}

fn finish_report(
    report: &mut RunReport,
    model: &RecurrentModel,
    cfg: &TrainingConfig,
    valid: Option<f64>,
) -> Result<()> {
    report.final_block_sparsity = model_block_sparsity(model, cfg.block_h, cfg.block_w)?;
    report.param_count = model.param_count();
    report.nonzero_count = model.nonzero_count();
    report.layers = layer_sparsities(model, cfg.block_h, cfg.block_w)?;
    if let Some(v) = valid {
        report.final_valid_loss = v;
    }
    Ok(())
}

/// Resolves the schedule: explicit bounds win, the rest come from the heuristic table.
pub fn resolve_schedule(
    cfg: &TrainingConfig,
    iters_per_epoch: usize,
) -> Result<PruningSchedule> {
    let total = iters_per_epoch * cfg.epochs;
    let h = heuristic_schedule(total, iters_per_epoch, cfg.epochs)?;
    let s = PruningSchedule {
        start_itr: cfg.prune.start_itr.unwrap_or(h.start_itr),
        ramp_itr: cfg.prune.ramp_itr.unwrap_or(h.ramp_itr),
        end_itr: cfg.prune.end_itr.unwrap_or(h.end_itr),
        freq: cfg.prune.freq,
    };
    s.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(s)
}

/// Start slope for one layer kind from its weights: `q` at the target
/// percentile, the elementwise slope, then the block-size correction.
pub fn derive_hyper(
    weights: &[&DenseMatrix],
    schedule: PruningSchedule,
    cfg: &TrainingConfig,
) -> Result<PruningHyperParams> {
    let theta = match cfg.prune.theta {
        Some(t) => t,
        None => {
            let flat: Vec<f64> = weights.iter().flat_map(|w| w.values().iter().copied()).collect();
            let q = percentile_q(&flat, cfg.prune.target)?;
            let tw = start_slope_weight(
                q,
                schedule.freq,
                schedule.start_itr,
                schedule.ramp_itr,
                schedule.end_itr,
            )?;
            start_slope_block(tw, cfg.block_h * cfg.block_w)?
        }
    } * cfg.prune.theta_scale;
    schedule.with_slopes(theta, cfg.prune.ramp_ratio * theta)
}

/// Iterations per epoch for a corpus of `corpus_len` bytes.
pub fn iters_per_epoch(cfg: &TrainingConfig, corpus_len: usize) -> Result<usize> {
    let valid = (corpus_len as f64 * cfg.valid_fraction) as usize;
    let lane = (corpus_len - valid) / cfg.batch.max(1);
    if lane < cfg.seq_len + 1 {
        return Err(Error::Config(format!(
            "corpus of {corpus_len} bytes is too short for batch {} and sequence length {}",
            cfg.batch, cfg.seq_len
        )));
    }
    Ok((lane - 1) / cfg.seq_len)
}

/// (recurrent, linear) hyper-parameters a run would use. `source` supplies
/// the weights for q and may be omitted when `prune.theta` is set.
pub fn planned_hyper(
    cfg: &TrainingConfig,
    iters_per_epoch: usize,
    source: Option<&RecurrentModel>,
) -> Result<(PruningHyperParams, PruningHyperParams)> {
    let schedule = resolve_schedule(cfg, iters_per_epoch)?;
    let kind = |role: ParamRole| -> Result<PruningHyperParams> {
        let ws: Vec<&DenseMatrix> = match source {
            Some(m) => m
                .prunable()
                .into_iter()
                .filter(|&i| m.roles()[i] == role)
                .map(|i| &m.params()[i])
                .collect(),
            None if cfg.prune.theta.is_some() => Vec::new(),
            None => {
                return Err(Error::Config(
                    "prune.theta or prune.warm_checkpoint is needed to plan the schedule".into(),
                ))
            }
        };
        derive_hyper(&ws, schedule, cfg)
    };
    Ok((kind(ParamRole::Recurrent)?, kind(ParamRole::Linear)?))
}

struct KindState<M> {
    /// Indices into the model's parameter list.
    params: Vec<usize>,
    /// Positions in the prunable list (mask order).
    slots: Vec<usize>,
    state: Option<PruningState<M>>,
}

/// The training loop, generic over the mask implementation so alternative
/// pruning rules can be checked against the block pipeline.
pub fn train_with<M: MaskPolicy>(
    cfg: &TrainingConfig,
    corpus: &[u8],
    mut new_mask: impl FnMut(&DenseMatrix) -> Result<M>,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    let vocab = Vocab::build(corpus, cfg.vocab_alignment());
    let (train_bytes, valid_bytes) = split_corpus(corpus, cfg.valid_fraction)?;
    let valid_tokens = vocab.encode(valid_bytes);
    let batcher = StreamBatcher::new(vocab.encode(train_bytes), cfg.batch, cfg.seq_len)?;
    let ipe = batcher.iters_per_epoch();
    let total_iters = ipe * cfg.epochs;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = RecurrentModel::new(cfg.cell, vocab.size(), cfg.hidden, cfg.layers, &mut rng)?;
    model.check_blocks(cfg.block_h, cfg.block_w)?;
    let prunable = model.prunable();
    let mut masks = prunable
        .iter()
        .map(|&i| new_mask(&model.params()[i]))
        .collect::<Result<Vec<M>>>()?;

    let schedule = if cfg.prune.enabled {
        Some(resolve_schedule(cfg, ipe)?)
    } else {
        None
    };
    let mut reg: RegularizerConfig = cfg.regularizer();
    if reg.active_until.is_none() {
        reg.active_until = schedule.map(|s| s.end_itr);
    }
    if reg.kind != crate::regularizers::RegularizerKind::None {
        model.check_blocks(reg.block_h, reg.block_w)?;
    }
    let warm = match (&cfg.prune.warm_checkpoint, cfg.prune.enabled) {
        (Some(path), true) => Some(crate::rnn::checkpoint::load_checkpoint(path)?.model),
        _ => None,
    };

    let mut kinds: Vec<KindState<M>> = [ParamRole::Recurrent, ParamRole::Linear]
        .into_iter()
        .map(|role| {
            let (slots, params) = prunable
                .iter()
                .enumerate()
                .filter(|(_, &i)| model.roles()[i] == role)
                .map(|(s, &i)| (s, i))
                .unzip();
            KindState {
                params,
                slots,
                state: None,
            }
        })
        .collect();

    let mut opt = NesterovMomentum::new(model.params(), cfg.lr, cfg.momentum)?;
    let mut report = RunReport {
        config_hash: cfg.hash(),
        block_h: cfg.block_h,
        block_w: cfg.block_w,
        iters_per_epoch: ipe,
        total_iters,
        schedule,
        hyper_recurrent: None,
        hyper_linear: None,
        records: Vec::with_capacity(total_iters),
        valid_loss: Vec::with_capacity(cfg.epochs),
        final_valid_loss: f64::NAN,
        final_block_sparsity: 0.0,
        param_count: 0,
        nonzero_count: 0,
        layers: Vec::new(),
        diverged: None,
        checkpoint: None,
    };

    let mut last_good = model.params().to_vec();
    let mut it = 0;
    'epochs: for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let mut state: Option<Vec<DenseMatrix>> = None;
        for b in 0..ipe {
            let batch = batcher.batch(b);
            let fb = forward_backward(&model, &batch, state.as_deref(), &reg, it)?;
            if !fb.loss.is_finite() {
                model.set_params(last_good.clone())?;
                report.diverged = Some(Divergence {
                    iteration: it,
                    loss: fb.loss,
                });
                break 'epochs;
            }
            last_good.clone_from_slice(model.params());
            let mut grads = fb.grads;
            for (&pi, mask) in prunable.iter().zip(&masks) {
                mask.mask(&mut grads[pi])?;
            }
            clip_global_norm(&mut grads, cfg.clip);
            opt.step(model.params_mut(), &grads)?;

            if let Some(sched) = schedule {
                if it == sched.start_itr {
                    for (k, kind) in kinds.iter_mut().enumerate() {
                        if kind.params.is_empty() {
                            continue;
                        }
                        let src = warm.as_ref().unwrap_or(&model);
                        let ws: Vec<&DenseMatrix> =
                            kind.params.iter().map(|&i| &src.params()[i]).collect();
                        let hyper = derive_hyper(&ws, sched, cfg)?;
                        if k == 0 {
                            report.hyper_recurrent = Some(hyper);
                        } else {
                            report.hyper_linear = Some(hyper);
                        }
                        let kind_masks = kind.slots.iter().map(|&s| masks[s].clone()).collect();
                        kind.state = Some(PruningState::new(hyper, kind_masks)?);
                    }
                }
                for kind in kinds.iter_mut() {
                    let Some(st) = kind.state.as_mut() else { continue };
                    let ws: Vec<&DenseMatrix> =
                        kind.params.iter().map(|&i| &model.params()[i]).collect();
                    if st.advance(it, &ws)? {
                        for (&s, m) in kind.slots.iter().zip(&st.masks) {
                            masks[s] = m.clone();
                        }
                        for (&pi, m) in kind.params.iter().zip(&st.masks) {
                            m.mask(&mut opt.velocity_mut()[pi])?;
                        }
                    }
                }
            }
            for (&pi, mask) in prunable.iter().zip(&masks) {
                mask.mask(&mut model.params_mut()[pi])?;
            }

            let eps = |k: usize| kinds[k].state.as_ref().map_or(0.0, |s| s.epsilon);
            report.records.push(IterationRecord {
                iteration: it,
                loss: fb.loss,
                epsilon_recurrent: eps(0),
                epsilon_linear: eps(1),
                block_sparsity: model_block_sparsity(&model, cfg.block_h, cfg.block_w)?,
            });
            state = Some(fb.final_state);
            it += 1;
        }
        if !valid_tokens.is_empty() {
            report.valid_loss.push(evaluate(&model, &valid_tokens)?);
        }
    }

    if report.diverged.is_none()
        && model.params().iter().any(|p| p.values().iter().any(|v| !v.is_finite()))
    {
        model.set_params(last_good)?;
        report.diverged = Some(Divergence {
            iteration: it.saturating_sub(1),
            loss: f64::NAN,
        });
    }
    let final_valid = if valid_tokens.is_empty() || report.diverged.is_some() {
        f64::NAN
    } else {
        evaluate(&model, &valid_tokens)?
    };
    finish_report(&mut report, &model, cfg, Some(final_valid))?;
    Ok(TrainOutcome {
        model,
        vocab,
        masks,
        report,
    })
}
