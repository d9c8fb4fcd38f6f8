//! Batched forward pass and backpropagation through time.
//!
//! Activations are batch-major: a window of `T` steps over `B` lanes is a
//! `(T·B) × n` row-major block whose row `t·B + b` belongs to lane `b` at
//! step `t`. Input projections and all weight gradients are computed as one
//! GEMM over the whole window; only the recurrent products run per step.

use crate::error::{Error, Result};
use crate::formats::{gemm, DenseMatrix, MatRef};
use crate::regularizers::{penalty, penalty_grad, regularizer_active, RegularizerConfig};
use crate::rnn::data::Batch;
use crate::rnn::model::{sigmoid, CellKind, RecurrentModel};

/// Loss and exact gradients of one window.
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    /// Data loss plus the active penalty.
    pub loss: f64,
    /// Mean cross-entropy over every (lane, step) prediction, in nats.
    pub data_loss: f64,
    pub reg_loss: f64,
    /// One gradient per parameter, same order and shapes as the model.
    pub grads: Vec<DenseMatrix>,
    /// Hidden state after the last step, one `B × H` matrix per layer.
    pub final_state: Vec<DenseMatrix>,
}

struct LayerCache {
    input: Vec<f64>,
    h0: Vec<f64>,
    hs: Vec<f64>,
    /// GRU: update, reset, candidate and reset-gated previous state.
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

/// `(T·B) × n` projection `x · Wᵀ + b`.
fn project(x: &[f64], rows: usize, w: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
    let n = w.rows();
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(b.values());
    }
    gemm(
        1.0,
        MatRef::new(x, rows, w.cols()),
        MatRef::new(w.values(), n, w.cols()).t(),
        1.0,
        &mut out,
    );
    out
}

fn one_hot(tokens: &[u32], vocab: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; tokens.len() * vocab];
    for (i, &t) in tokens.iter().enumerate() {
        let t = t as usize;
        if t >= vocab {
            return Err(Error::ShapeMismatch(format!(
                "token id {t} outside vocabulary of {vocab}"
            )));
        }
        x[i * vocab + t] = 1.0;
    }
    Ok(x)
}

fn check_state(model: &RecurrentModel, batch: usize, state: Option<&[DenseMatrix]>) -> Result<()> {
    if let Some(s) = state {
        if s.len() != model.layers() || s.iter().any(|m| m.shape() != (batch, model.hidden())) {
            return Err(Error::ShapeMismatch(format!(
                "initial state must be {} matrices of {}x{}",
                model.layers(),
                batch,
                model.hidden()
            )));
        }
    }
    Ok(())
}

fn forward_layer(
    model: &RecurrentModel,
    layer: usize,
    input: Vec<f64>,
    h0: Vec<f64>,
    steps: usize,
    batch: usize,
) -> LayerCache {
    let p = model.params();
    let h = model.hidden();
    let n = steps * batch;
    let slab = batch * h;
    let mut hs = vec![0.0; n * h];
    let mut cache = LayerCache {
        input,
        h0,
        hs: Vec::new(),
        z: Vec::new(),
        r: Vec::new(),
        c: Vec::new(),
        rh: Vec::new(),
    };
    match model.cell() {
        CellKind::Rnn => {
            let g = model.gate(layer, 0);
            let mut a = project(&cache.input, n, &p[g.w], &p[g.b]);
            let u = MatRef::new(p[g.u].values(), h, h).t();
            for t in 0..steps {
                let (done, rest) = hs.split_at_mut(t * slab);
                let prev = if t == 0 { &cache.h0[..] } else { &done[(t - 1) * slab..] };
                let at = &mut a[t * slab..(t + 1) * slab];
                gemm(1.0, MatRef::new(prev, batch, h), u, 1.0, at);
                for (o, v) in rest[..slab].iter_mut().zip(at.iter()) {
                    *o = v.tanh();
                }
            }
        }
        CellKind::Gru => {
            let (gz, gr, gc) = (model.gate(layer, 0), model.gate(layer, 1), model.gate(layer, 2));
            let mut z = project(&cache.input, n, &p[gz.w], &p[gz.b]);
            let mut r = project(&cache.input, n, &p[gr.w], &p[gr.b]);
            let mut c = project(&cache.input, n, &p[gc.w], &p[gc.b]);
            let mut rh = vec![0.0; n * h];
            let uz = MatRef::new(p[gz.u].values(), h, h).t();
            let ur = MatRef::new(p[gr.u].values(), h, h).t();
            let uc = MatRef::new(p[gc.u].values(), h, h).t();
            for t in 0..steps {
                let span = t * slab..(t + 1) * slab;
                let (done, rest) = hs.split_at_mut(t * slab);
                let prev = if t == 0 { &cache.h0[..] } else { &done[(t - 1) * slab..] };
                let prev_m = MatRef::new(prev, batch, h);
                let zt = &mut z[span.clone()];
                gemm(1.0, prev_m, uz, 1.0, zt);
                zt.iter_mut().for_each(|v| *v = sigmoid(*v));
                let rt = &mut r[span.clone()];
                gemm(1.0, prev_m, ur, 1.0, rt);
                rt.iter_mut().for_each(|v| *v = sigmoid(*v));
                let rht = &mut rh[span.clone()];
                for ((o, rv), hv) in rht.iter_mut().zip(rt.iter()).zip(prev) {
                    *o = rv * hv;
                }
                let ct = &mut c[span.clone()];
                gemm(1.0, MatRef::new(rht, batch, h), uc, 1.0, ct);
                ct.iter_mut().for_each(|v| *v = v.tanh());
                for i in 0..slab {
                    rest[i] = (1.0 - zt[i]) * prev[i] + zt[i] * ct[i];
                }
            }
            cache.z = z;
            cache.r = r;
            cache.c = c;
            cache.rh = rh;
        }
    }
    cache.hs = hs;
    cache
}

fn forward_all(
    model: &RecurrentModel,
    batch: &Batch,
    state: Option<&[DenseMatrix]>,
) -> Result<Vec<LayerCache>> {
    check_state(model, batch.batch, state)?;
    if batch.inputs.len() != batch.batch * batch.steps {
        return Err(Error::ShapeMismatch("batch inputs have the wrong length".into()));
    }
    let mut caches: Vec<LayerCache> = Vec::with_capacity(model.layers());
    for l in 0..model.layers() {
        let input = match caches.last() {
            None => one_hot(&batch.inputs, model.vocab())?,
            Some(prev) => prev.hs.clone(),
        };
        let h0 = match state {
            Some(s) => s[l].values().to_vec(),
            None => vec![0.0; batch.batch * model.hidden()],
        };
        caches.push(forward_layer(model, l, input, h0, batch.steps, batch.batch));
    }
    Ok(caches)
}

/// Mean cross-entropy of the head over the top layer's outputs, plus
/// `d loss / d logits` when `want_grad` is set.
fn head_loss(
    model: &RecurrentModel,
    top: &[f64],
    targets: &[u32],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let (hw, hb) = model.head();
    let p = model.params();
    let n = targets.len();
    let v = model.vocab();
    let mut logits = project(top, n, &p[hw], &p[hb]);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= v {
            return Err(Error::ShapeMismatch(format!(
                "target id {t} outside vocabulary of {v}"
            )));
        }
        let row = &mut logits[i * v..(i + 1) * v];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[t];
        if want_grad {
            for x in row.iter_mut() {
                *x = (*x - log_z).exp() / n as f64;
            }
            row[t] -= 1.0 / n as f64;
        }
    }
    Ok((loss / n as f64, logits))
}

/// Accumulates `grad += d_outᵀ · x` for `(n × out)` and `(n × in)` slabs.
fn accumulate_weight_grad(grad: &mut DenseMatrix, d_out: &[f64], x: &[f64], n: usize) {
    let (out, inp) = grad.shape();
    gemm(
        1.0,
        MatRef::new(d_out, n, out).t(),
        MatRef::new(x, n, inp),
        1.0,
        grad.values_mut(),
    );
}

fn accumulate_bias_grad(grad: &mut DenseMatrix, d_out: &[f64]) {
    let w = grad.cols();
    let g = grad.values_mut();
    for row in d_out.chunks(w) {
        for (a, b) in g.iter_mut().zip(row) {
            *a += b;
        }
    }
}

/// `(T·B) × H` slab of the states each step started from.
fn previous_states(cache: &LayerCache, slab: usize) -> Vec<f64> {
    let mut prev = Vec::with_capacity(cache.hs.len());
    prev.extend_from_slice(&cache.h0);
    prev.extend_from_slice(&cache.hs[..cache.hs.len() - slab]);
    prev
}

/// Backpropagates `d_hs` through one layer, writing weight gradients into
/// `grads` and returning the gradient w.r.t. the layer input (unless it is
/// the bottom layer).
fn backward_layer(
    model: &RecurrentModel,
    layer: usize,
    cache: &LayerCache,
    d_hs: &[f64],
    steps: usize,
    batch: usize,
    grads: &mut [DenseMatrix],
) -> Option<Vec<f64>> {
    let p = model.params();
    let h = model.hidden();
    let n = steps * batch;
    let slab = batch * h;
    let inp = model.layer_input(layer);
    let prev_all = previous_states(cache, slab);
    let mut dh_next = vec![0.0; slab];
    let mut d_input = (layer > 0).then(|| vec![0.0; n * inp]);
    match model.cell() {
        CellKind::Rnn => {
            let g = model.gate(layer, 0);
            let u = MatRef::new(p[g.u].values(), h, h);
            let mut da = vec![0.0; n * h];
            for t in (0..steps).rev() {
                let span = t * slab..(t + 1) * slab;
                let dat = &mut da[span.clone()];
                for (i, d) in dat.iter_mut().enumerate() {
                    let hv = cache.hs[t * slab + i];
                    *d = (d_hs[t * slab + i] + dh_next[i]) * (1.0 - hv * hv);
                }
                gemm(1.0, MatRef::new(dat, batch, h), u, 0.0, &mut dh_next);
            }
            accumulate_weight_grad(&mut grads[g.u], &da, &prev_all, n);
            accumulate_weight_grad(&mut grads[g.w], &da, &cache.input, n);
            accumulate_bias_grad(&mut grads[g.b], &da);
            if let Some(dx) = d_input.as_mut() {
                gemm(
                    1.0,
                    MatRef::new(&da, n, h),
                    MatRef::new(p[g.w].values(), h, inp),
                    0.0,
                    dx,
                );
            }
        }
        CellKind::Gru => {
            let gates = [model.gate(layer, 0), model.gate(layer, 1), model.gate(layer, 2)];
            let [gz, gr, gc] = gates;
            let mut daz = vec![0.0; n * h];
            let mut dar = vec![0.0; n * h];
            let mut dac = vec![0.0; n * h];
            let mut drh = vec![0.0; slab];
            let mut dh_prev = vec![0.0; slab];
            for t in (0..steps).rev() {
                let off = t * slab;
                let prev = &prev_all[off..off + slab];
                for i in 0..slab {
                    let dh = d_hs[off + i] + dh_next[i];
                    let (z, c) = (cache.z[off + i], cache.c[off + i]);
                    dac[off + i] = dh * z * (1.0 - c * c);
                    daz[off + i] = dh * (c - prev[i]) * z * (1.0 - z);
                    dh_prev[i] = dh * (1.0 - z);
                }
                gemm(
                    1.0,
                    MatRef::new(&dac[off..off + slab], batch, h),
                    MatRef::new(p[gc.u].values(), h, h),
                    0.0,
                    &mut drh,
                );
                for i in 0..slab {
                    let r = cache.r[off + i];
                    dar[off + i] = drh[i] * prev[i] * r * (1.0 - r);
                    dh_prev[i] += drh[i] * r;
                }
                gemm(
                    1.0,
                    MatRef::new(&daz[off..off + slab], batch, h),
                    MatRef::new(p[gz.u].values(), h, h),
                    1.0,
                    &mut dh_prev,
                );
                gemm(
                    1.0,
                    MatRef::new(&dar[off..off + slab], batch, h),
                    MatRef::new(p[gr.u].values(), h, h),
                    1.0,
                    &mut dh_prev,
                );
                std::mem::swap(&mut dh_next, &mut dh_prev);
            }
            accumulate_weight_grad(&mut grads[gz.u], &daz, &prev_all, n);
            accumulate_weight_grad(&mut grads[gr.u], &dar, &prev_all, n);
            accumulate_weight_grad(&mut grads[gc.u], &dac, &cache.rh, n);
            for (g, d) in [(gz, &daz), (gr, &dar), (gc, &dac)] {
                accumulate_weight_grad(&mut grads[g.w], d, &cache.input, n);
                accumulate_bias_grad(&mut grads[g.b], d);
                if let Some(dx) = d_input.as_mut() {
                    gemm(
                        1.0,
                        MatRef::new(d, n, h),
                        MatRef::new(p[g.w].values(), h, inp),
                        1.0,
                        dx,
                    );
                }
            }
        }
    }
    d_input
}

fn zero_grads(model: &RecurrentModel) -> Vec<DenseMatrix> {
    model
        .params()
        .iter()
        .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
        .collect()
}

fn final_states(model: &RecurrentModel, caches: &[LayerCache], batch: usize) -> Vec<DenseMatrix> {
    let slab = batch * model.hidden();
    caches
        .iter()
        .map(|c| {
            let last = c.hs[c.hs.len() - slab..].to_vec();
            DenseMatrix::new(batch, model.hidden(), last).expect("state slab shape")
        })
        .collect()
}

/// Mean cross-entropy of one window, forward only.
pub fn data_loss(
    model: &RecurrentModel,
    batch: &Batch,
    state: Option<&[DenseMatrix]>,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let caches = forward_all(model, batch, state)?;
    let top = &caches.last().expect("at least one layer").hs;
    let (loss, _) = head_loss(model, top, &batch.targets, false)?;
    Ok((loss, final_states(model, &caches, batch.batch)))
}

/// Penalty over the prunable matrices when `cfg` is active at `iteration`.
pub fn regularization(
    model: &RecurrentModel,
    cfg: &RegularizerConfig,
    iteration: usize,
) -> Result<f64> {
    if !regularizer_active(cfg, iteration) {
        return Ok(0.0);
    }
    model
        .prunable()
        .into_iter()
        .map(|i| penalty(&model.params()[i], cfg))
        .sum()
}

/// Loss and gradients of one truncated-BPTT window.
///
/// `state` is the carried hidden state (treated as a constant); `None`
/// starts from zeros. The regularizer is added to the loss and gradients of
/// the prunable matrices when active at `iteration`. Gradients are returned
/// unmasked; the training loop zeroes those of dead blocks.
pub fn forward_backward(
    model: &RecurrentModel,
    batch: &Batch,
    state: Option<&[DenseMatrix]>,
    reg: &RegularizerConfig,
    iteration: usize,
) -> Result<ForwardBackward> {
    let caches = forward_all(model, batch, state)?;
    let n = batch.steps * batch.batch;
    let h = model.hidden();
    let top = &caches.last().expect("at least one layer").hs;
    let (data_loss, d_logits) = head_loss(model, top, &batch.targets, true)?;

    let mut grads = zero_grads(model);
    let (hw, hb) = model.head();
    accumulate_weight_grad(&mut grads[hw], &d_logits, top, n);
    accumulate_bias_grad(&mut grads[hb], &d_logits);
    let mut d_hs = vec![0.0; n * h];
    gemm(
        1.0,
        MatRef::new(&d_logits, n, model.vocab()),
        MatRef::new(model.params()[hw].values(), model.vocab(), h),
        0.0,
        &mut d_hs,
    );
    for l in (0..model.layers()).rev() {
        match backward_layer(model, l, &caches[l], &d_hs, batch.steps, batch.batch, &mut grads) {
            Some(d) => d_hs = d,
            None => break,
        }
    }

    let mut reg_loss = 0.0;
    if regularizer_active(reg, iteration) {
        for i in model.prunable() {
            let w = &model.params()[i];
            reg_loss += penalty(w, reg)?;
            grads[i].axpy(1.0, &penalty_grad(w, reg)?);
        }
    }
    Ok(ForwardBackward {
        loss: data_loss + reg_loss,
        data_loss,
        reg_loss,
        grads,
        final_state: final_states(model, &caches, batch.batch),
    })
}
