//! Output-connection (fan-out) histograms.
//!
//! A neuron's output connections are the nonzero weights that read its
//! activation: the nonzeros in its column of every matrix that consumes it.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::DenseMatrix;
use crate::rnn::RecurrentModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FanoutHistogram {
    pub layer: String,
    /// Output connections of each neuron.
    pub counts: Vec<usize>,
    /// Largest possible count (all consuming weights nonzero).
    pub max_fanout: usize,
}

impl FanoutHistogram {
    pub fn neurons(&self) -> usize {
        self.counts.len()
    }

    pub fn dead(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }

    /// `(lo, hi, neurons)` bins: `[0, 0]` for dead neurons, then `width`-wide
    /// bins starting at 1 and covering `max_fanout`.
    pub fn bins(&self, width: usize) -> Vec<(usize, usize, usize)> {
        let width = width.max(1);
        let mut bins = vec![(0, 0, self.dead())];
        let mut lo = 1;
        while lo <= self.max_fanout.max(1) {
            let hi = lo + width - 1;
            let n = self.counts.iter().filter(|&&c| c >= lo && c <= hi).count();
            bins.push((lo, hi, n));
            lo += width;
        }
        bins
    }
}

/// Column-nonzero counts summed over every consuming matrix.
pub fn column_fanout(consumers: &[&DenseMatrix]) -> Result<Vec<usize>> {
    let Some(first) = consumers.first() else {
        return Err(Error::Empty("consuming matrices"));
    };
    let mut counts = vec![0; first.cols()];
    for m in consumers {
        if m.cols() != counts.len() {
            return Err(Error::ShapeMismatch(format!(
                "consumer with {} columns, expected {}",
                m.cols(),
                counts.len()
            )));
        }
        for r in 0..m.rows() {
            for (c, v) in m.row(r).iter().enumerate() {
                counts[c] += usize::from(*v != 0.0);
            }
        }
    }
    Ok(counts)
}

/// One histogram for the input symbols and one per recurrent layer.
pub fn fanout_histogram(model: &RecurrentModel) -> Result<Vec<FanoutHistogram>> {
    let gates = model.cell().gates();
    let mut out = Vec::with_capacity(model.layers() + 1);
    let hist = |layer: String, consumers: Vec<&DenseMatrix>| -> Result<FanoutHistogram> {
        Ok(FanoutHistogram {
            layer,
            max_fanout: consumers.iter().map(|m| m.rows()).sum(),
            counts: column_fanout(&consumers)?,
        })
    };
    let inputs: Vec<&DenseMatrix> = (0..gates)
        .map(|g| &model.params()[model.gate(0, g).w])
        .collect();
    out.push(hist("input".into(), inputs)?);
    for l in 0..model.layers() {
        let mut consumers: Vec<&DenseMatrix> = (0..gates)
            .map(|g| &model.params()[model.gate(l, g).u])
            .collect();
        if l + 1 < model.layers() {
            consumers.extend((0..gates).map(|g| &model.params()[model.gate(l + 1, g).w]));
        } else {
            consumers.push(&model.params()[model.head().0]);
        }
        out.push(hist(format!("layer{l}"), consumers)?);
    }
    Ok(out)
}

/// CSV `layer,bin_lo,bin_hi,neurons`; the `0,0` row of each layer counts dead neurons.
pub fn write_fanout_csv<W: Write>(hists: &[FanoutHistogram], width: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["layer", "bin_lo", "bin_hi", "neurons"])?;
    for h in hists {
        for (lo, hi, n) in h.bins(width) {
            out.write_record([h.layer.clone(), lo.to_string(), hi.to_string(), n.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
