use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
}

impl CellKind {
    /// Number of (input weights, recurrent weights, bias) triples per layer.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Rnn => "rnn",
            CellKind::Gru => "gru",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(CellKind::Rnn),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// What a parameter is, for pruning and regularization purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    /// Hidden-to-hidden weights.
    Recurrent,
    /// Input projections and the output head.
    Linear,
    Bias,
}

impl ParamRole {
    pub fn is_prunable(self) -> bool {
        !matches!(self, ParamRole::Bias)
    }
}

/// Per-gate parameter indices inside [`RecurrentModel::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateIdx {
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

/// Stack of vanilla-RNN or GRU layers over a one-hot byte vocabulary with a
/// softmax output head.
///
/// Parameters live in one flat list so optimizers, checkpoints and gradient
/// checks can treat them uniformly. Per layer the order is `(w, u, b)` for
/// each gate; GRU gates are ordered update, reset, candidate. The head's
/// weights and bias come last. Biases are `1 × n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentModel {
    cell: CellKind,
    vocab: usize,
    hidden: usize,
    layers: usize,
    params: Vec<DenseMatrix>,
    names: Vec<String>,
    roles: Vec<ParamRole>,
}

const GRU_GATE_NAMES: [&str; 3] = ["z", "r", "h"];

impl RecurrentModel {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new(
        cell: CellKind,
        vocab: usize,
        hidden: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(cell, vocab, hidden, layers)?;
        for (p, role) in model.params.iter_mut().zip(&model.roles) {
            if role.is_prunable() {
                let k = 1.0 / (p.cols() as f64).sqrt();
                p.values_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-k..k));
            }
        }
        Ok(model)
    }

    pub fn zeros(cell: CellKind, vocab: usize, hidden: usize, layers: usize) -> Result<Self> {
        if vocab == 0 || hidden == 0 || layers == 0 {
            return Err(Error::Config(format!(
                "model needs positive vocab/hidden/layers, got {vocab}/{hidden}/{layers}"
            )));
        }
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut roles = Vec::new();
        for l in 0..layers {
            let input = if l == 0 { vocab } else { hidden };
            for g in 0..cell.gates() {
                let suffix = match cell {
                    CellKind::Rnn => String::new(),
                    CellKind::Gru => format!("_{}", GRU_GATE_NAMES[g]),
                };
                params.push(DenseMatrix::zeros(hidden, input));
                names.push(format!("l{l}.w{suffix}"));
                roles.push(ParamRole::Linear);
                params.push(DenseMatrix::zeros(hidden, hidden));
                names.push(format!("l{l}.u{suffix}"));
                roles.push(ParamRole::Recurrent);
                params.push(DenseMatrix::zeros(1, hidden));
                names.push(format!("l{l}.b{suffix}"));
                roles.push(ParamRole::Bias);
            }
        }
        params.push(DenseMatrix::zeros(vocab, hidden));
        names.push("head.w".into());
        roles.push(ParamRole::Linear);
        params.push(DenseMatrix::zeros(1, vocab));
        names.push("head.b".into());
        roles.push(ParamRole::Bias);
        Ok(Self {
            cell,
            vocab,
            hidden,
            layers,
            params,
            names,
            roles,
        })
    }

    pub fn cell(&self) -> CellKind {
        self.cell
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn params(&self) -> &[DenseMatrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[ParamRole] {
        &self.roles
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(DenseMatrix::len).sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.params.iter().map(DenseMatrix::count_nonzero).sum()
    }

    /// Indices of the prunable matrices, in parameter order.
    pub fn prunable(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.roles[i].is_prunable())
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn gate(&self, layer: usize, gate: usize) -> GateIdx {
        let base = (layer * self.cell.gates() + gate) * 3;
        GateIdx {
            w: base,
            u: base + 1,
            b: base + 2,
        }
    }

    pub fn head(&self) -> (usize, usize) {
        let base = self.layers * self.cell.gates() * 3;
        (base, base + 1)
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.vocab
        } else {
            self.hidden
        }
    }

    /// Replaces parameter values in order, checking every shape.
    pub fn set_params(&mut self, values: Vec<DenseMatrix>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} matrices for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (i, (have, new)) in self.params.iter().zip(&values).enumerate() {
            if have.shape() != new.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} expects {:?}, got {:?}",
                    self.names[i],
                    have.shape(),
                    new.shape()
                )));
            }
        }
        self.params = values;
        Ok(())
    }

    /// Every prunable matrix must tile exactly into `block_h × block_w` blocks.
    pub fn check_blocks(&self, block_h: usize, block_w: usize) -> Result<()> {
        for i in self.prunable() {
            self.params[i]
                .block_grid(block_h, block_w)
                .map_err(|e| Error::Config(format!("{}: {e}", self.names[i])))?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec_into(w: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o += w.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn check_cell(w_x: &DenseMatrix, w_h: &DenseMatrix, b: &[f64], x: &[f64], h: &[f64]) -> Result<()> {
    let hidden = w_h.rows();
    if w_h.cols() != hidden
        || w_x.rows() != hidden
        || w_x.cols() != x.len()
        || b.len() != hidden
        || h.len() != hidden
    {
        return Err(Error::ShapeMismatch(format!(
            "cell weights {:?}/{:?}, bias {}, input {}, state {}",
            w_x.shape(),
            w_h.shape(),
            b.len(),
            x.len(),
            h.len()
        )));
    }
    Ok(())
}

/// `tanh(W_x·x + W_h·h_prev + b)` for a single example.
pub fn rnn_cell_forward(
    w_x: &DenseMatrix,
    w_h: &DenseMatrix,
    b: &[f64],
    x: &[f64],
    h_prev: &[f64],
) -> Result<Vec<f64>> {
    check_cell(w_x, w_h, b, x, h_prev)?;
    let mut a = b.to_vec();
    matvec_into(w_x, x, &mut a);
    matvec_into(w_h, h_prev, &mut a);
    Ok(a.into_iter().map(f64::tanh).collect())
}

/// Borrowed GRU gate parameters: `(w, u, b)` for update, reset, candidate.
#[derive(Clone, Copy)]
pub struct GruParams<'a> {
    pub update: (&'a DenseMatrix, &'a DenseMatrix, &'a [f64]),
    pub reset: (&'a DenseMatrix, &'a DenseMatrix, &'a [f64]),
    pub candidate: (&'a DenseMatrix, &'a DenseMatrix, &'a [f64]),
}

impl<'a> GruParams<'a> {
    pub fn from_model(model: &'a RecurrentModel, layer: usize) -> Self {
        let p = model.params();
        let gate = |g| {
            let idx = model.gate(layer, g);
            (&p[idx.w], &p[idx.u], p[idx.b].values())
        };
        Self {
            update: gate(0),
            reset: gate(1),
            candidate: gate(2),
        }
    }
}

/// One GRU step: `h = (1 − z)⊙h_prev + z⊙h̃` with the reset gate applied to
/// `h_prev` before the candidate's recurrent product.
pub fn gru_cell_forward(p: &GruParams<'_>, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    for (w, u, b) in [p.update, p.reset, p.candidate] {
        check_cell(w, u, b, x, h_prev)?;
    }
    let gate = |(w, u, b): (&DenseMatrix, &DenseMatrix, &[f64]), h: &[f64]| {
        let mut a = b.to_vec();
        matvec_into(w, x, &mut a);
        matvec_into(u, h, &mut a);
        a
    };
    let z: Vec<f64> = gate(p.update, h_prev).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(p.reset, h_prev).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let cand: Vec<f64> = gate(p.candidate, &rh).into_iter().map(f64::tanh).collect();
    Ok((0..h_prev.len())
        .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * cand[i])
        .collect())
}
