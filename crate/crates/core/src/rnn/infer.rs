//! Step-by-step inference over parallel lanes with pluggable matrix kernels.
//!
//! Activations here are column-major in the lane dimension (`n × lanes`), so
//! every weight product is `W · X` and a block-sparse weight can be dropped
//! in for a dense one without touching the network code.

use crate::error::{Error, Result};
use crate::formats::{bsr_matmul, csr_matmul, BlockSparseMatrix, CsrMatrix, DenseMatrix};
use crate::rnn::model::{sigmoid, CellKind, RecurrentModel};

/// Lanes used to evaluate a token stream.
pub const EVAL_LANES: usize = 8;

/// A matrix that can left-multiply a dense operand.
pub trait LinearOp {
    fn shape(&self) -> (usize, usize);
    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix>;
}

impl LinearOp for DenseMatrix {
    fn shape(&self) -> (usize, usize) {
        DenseMatrix::shape(self)
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.matmul(x)
    }
}

impl LinearOp for BlockSparseMatrix {
    fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        bsr_matmul(self, x)
    }
}

impl LinearOp for CsrMatrix {
    fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        csr_matmul(self, x)
    }
}

/// A trained model with its prunable matrices held as `Op`.
pub struct InferenceNet<Op> {
    layout: RecurrentModel,
    ops: Vec<Option<Op>>,
}

impl InferenceNet<DenseMatrix> {
    pub fn dense(model: &RecurrentModel) -> Self {
        Self::build(model, |m| Ok(m.clone())).expect("dense conversion cannot fail")
    }
}

impl InferenceNet<BlockSparseMatrix> {
    pub fn bsr(model: &RecurrentModel, block_h: usize, block_w: usize) -> Result<Self> {
        Self::build(model, |m| BlockSparseMatrix::from_dense(m, block_h, block_w))
    }
}

impl InferenceNet<CsrMatrix> {
    pub fn csr(model: &RecurrentModel) -> Self {
        Self::build(model, |m| Ok(CsrMatrix::from_dense(m))).expect("csr conversion cannot fail")
    }
}

impl<Op: LinearOp> InferenceNet<Op> {
    pub fn build(
        model: &RecurrentModel,
        mut convert: impl FnMut(&DenseMatrix) -> Result<Op>,
    ) -> Result<Self> {
        let ops = model
            .params()
            .iter()
            .zip(model.roles())
            .map(|(p, role)| role.is_prunable().then(|| convert(p)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout: model.clone(),
            ops,
        })
    }

    fn op(&self, idx: usize) -> &Op {
        self.ops[idx].as_ref().expect("prunable parameter has an operator")
    }

    fn bias(&self, idx: usize) -> &[f64] {
        self.layout.params()[idx].values()
    }

    /// `W·x + U·h + b` for gate `g` of `layer`.
    fn gate(&self, layer: usize, g: usize, x: &DenseMatrix, h: &DenseMatrix) -> Result<DenseMatrix> {
        let idx = self.layout.gate(layer, g);
        let mut a = self.op(idx.w).apply(x)?;
        a.axpy(1.0, &self.op(idx.u).apply(h)?);
        add_bias(&mut a, self.bias(idx.b));
        Ok(a)
    }

    fn step_layer(&self, layer: usize, x: &DenseMatrix, h: &DenseMatrix) -> Result<DenseMatrix> {
        match self.layout.cell() {
            CellKind::Rnn => {
                let mut a = self.gate(layer, 0, x, h)?;
                a.values_mut().iter_mut().for_each(|v| *v = v.tanh());
                Ok(a)
            }
            CellKind::Gru => {
                let mut z = self.gate(layer, 0, x, h)?;
                z.values_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
                let mut r = self.gate(layer, 1, x, h)?;
                r.values_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
                let mut rh = r;
                for (a, b) in rh.values_mut().iter_mut().zip(h.values()) {
                    *a *= b;
                }
                let idx = self.layout.gate(layer, 2);
                let mut c = self.op(idx.w).apply(x)?;
                c.axpy(1.0, &self.op(idx.u).apply(&rh)?);
                add_bias(&mut c, self.bias(idx.b));
                let mut out = c;
                for ((o, zv), hv) in out.values_mut().iter_mut().zip(z.values()).zip(h.values()) {
                    *o = (1.0 - zv) * hv + zv * o.tanh();
                }
                Ok(out)
            }
        }
    }

    /// Mean next-token cross-entropy (nats) over `tokens`, split into
    /// `lanes` contiguous lanes that each start from a zero state.
    /// Trailing tokens that do not fill a lane are ignored.
    pub fn mean_cross_entropy(&self, tokens: &[u32], lanes: usize) -> Result<f64> {
        let lanes = lanes.max(1);
        let lane_len = tokens.len() / lanes;
        if lane_len < 2 {
            return Err(Error::Empty("evaluation corpus"));
        }
        let (v, h) = (self.layout.vocab(), self.layout.hidden());
        let (hw, hb) = self.layout.head();
        let mut state = vec![DenseMatrix::zeros(h, lanes); self.layout.layers()];
        let mut total = 0.0;
        for t in 0..lane_len - 1 {
            let mut x = DenseMatrix::zeros(v, lanes);
            for lane in 0..lanes {
                let tok = tokens[lane * lane_len + t] as usize;
                if tok >= v {
                    return Err(Error::ShapeMismatch(format!(
                        "token id {tok} outside vocabulary of {v}"
                    )));
                }
                x.set(tok, lane, 1.0);
            }
            for (l, s) in state.iter_mut().enumerate() {
                let next = self.step_layer(l, &x, s)?;
                x = next.clone();
                *s = next;
            }
            let mut logits = self.op(hw).apply(&x)?;
            add_bias(&mut logits, self.bias(hb));
            for lane in 0..lanes {
                let target = tokens[lane * lane_len + t + 1] as usize;
                let col = (0..v).map(|r| logits.get(r, lane));
                let max = col.clone().fold(f64::NEG_INFINITY, f64::max);
                let log_z = max + col.map(|x| (x - max).exp()).sum::<f64>().ln();
                total += log_z - logits.get(target, lane);
            }
        }
        Ok(total / (lanes * (lane_len - 1)) as f64)
    }
}

fn add_bias(a: &mut DenseMatrix, b: &[f64]) {
    for (r, bv) in b.iter().enumerate() {
        a.row_mut(r).iter_mut().for_each(|v| *v += bv);
    }
}

/// Held-out mean cross-entropy (nats/token) with dense kernels.
pub fn evaluate(model: &RecurrentModel, tokens: &[u32]) -> Result<f64> {
    InferenceNet::dense(model).mean_cross_entropy(tokens, EVAL_LANES)
}

/// Same as [`evaluate`], with every prunable matrix converted to BSR and
/// multiplied through the block-sparse kernel.
pub fn evaluate_bsr(
    model: &RecurrentModel,
    tokens: &[u32],
    block_h: usize,
    block_w: usize,
) -> Result<f64> {
    InferenceNet::bsr(model, block_h, block_w)?.mean_cross_entropy(tokens, EVAL_LANES)
}
