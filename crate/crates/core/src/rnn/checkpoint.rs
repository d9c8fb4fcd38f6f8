//! Model checkpoints in the `BSNN1` container.
//!
//! Layout: the magic line, one manifest line of `key=value` pairs, then for
//! every parameter a `param=<name>` line followed by a matrix record, then
//! for every prunable matrix a `mask=<name>` line followed by a dense 0/1
//! record over the block grid. Prunable matrices are stored as BSR; biases
//! are stored dense.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::io::{expect_magic, read_line, read_record, write_record, Dtype, MAGIC};
use crate::formats::{BlockSparseMatrix, DenseMatrix};
use crate::pruning::BlockMask;
use crate::rnn::data::Vocab;
use crate::rnn::model::{CellKind, RecurrentModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub model: RecurrentModel,
    pub vocab: Vocab,
    pub block_h: usize,
    pub block_w: usize,
    /// One per prunable matrix, in [`RecurrentModel::prunable`] order.
    pub masks: Vec<BlockMask>,
}

impl Checkpoint {
    /// Masks derived from the all-zero blocks of the weights.
    pub fn from_model(
        config_hash: impl Into<String>,
        model: RecurrentModel,
        vocab: Vocab,
        block_h: usize,
        block_w: usize,
    ) -> Result<Self> {
        let masks = model
            .prunable()
            .into_iter()
            .map(|i| zero_block_mask(&model.params()[i], block_h, block_w))
            .collect::<Result<_>>()?;
        Ok(Self {
            config_hash: config_hash.into(),
            model,
            vocab,
            block_h,
            block_w,
            masks,
        })
    }
}

fn zero_block_mask(w: &DenseMatrix, block_h: usize, block_w: usize) -> Result<BlockMask> {
    let (gr, gc) = w.block_grid(block_h, block_w)?;
    let kept = (0..gr * gc)
        .map(|k| {
            let (br, bc) = (k / gc, k % gc);
            (0..block_h).any(|i| {
                w.row(br * block_h + i)[bc * block_w..(bc + 1) * block_w]
                    .iter()
                    .any(|&v| v != 0.0)
            })
        })
        .collect();
    BlockMask::from_kept(gr, gc, block_h, block_w, kept)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unhex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Corrupt("odd-length hex field".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| Error::Corrupt(format!("bad hex {:?}", &s[i..i + 2])))
        })
        .collect()
}

pub fn write_checkpoint<W: Write>(w: &mut W, ck: &Checkpoint, dtype: Dtype) -> Result<()> {
    let m = &ck.model;
    let prunable = m.prunable();
    if ck.masks.len() != prunable.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for {} prunable matrices",
            ck.masks.len(),
            prunable.len()
        )));
    }
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "config_hash={} cell={} hidden={} layers={} vocab={} vocab_bytes={} block_h={} block_w={} params={} masks={} dtype={dtype}",
        ck.config_hash,
        m.cell(),
        m.hidden(),
        m.layers(),
        m.vocab(),
        hex(ck.vocab.bytes()),
        ck.block_h,
        ck.block_w,
        m.params().len(),
        ck.masks.len(),
    )?;
    for (i, p) in m.params().iter().enumerate() {
        writeln!(w, "param={}", m.names()[i])?;
        if m.roles()[i].is_prunable() {
            let bsr = BlockSparseMatrix::from_dense(p, ck.block_h, ck.block_w)?;
            write_record(w, &bsr.into(), dtype)?;
        } else {
            write_record(w, &p.clone().into(), dtype)?;
        }
    }
    for (mask, &i) in ck.masks.iter().zip(&prunable) {
        writeln!(w, "mask={}", m.names()[i])?;
        let (gr, gc) = mask.grid();
        let grid = mask.kept().iter().map(|&k| f64::from(u8::from(k))).collect();
        write_record(w, &DenseMatrix::new(gr, gc, grid)?.into(), dtype)?;
    }
    Ok(())
}

fn manifest_field<'a>(fields: &[(&'a str, &'a str)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Corrupt(format!("manifest lacks {key}")))
}

fn manifest_num(fields: &[(&str, &str)], key: &str) -> Result<usize> {
    let v = manifest_field(fields, key)?;
    v.parse()
        .map_err(|_| Error::Corrupt(format!("manifest {key}={v:?} is not a number")))
}

fn expect_label<R: BufRead>(r: &mut R, label: &str, name: &str) -> Result<()> {
    let line = read_line(r)?;
    match line.split_once('=') {
        Some((l, n)) if l == label && n == name => Ok(()),
        _ => Err(Error::Corrupt(format!("expected {label}={name}, found {line:?}"))),
    }
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Checkpoint> {
    expect_magic(r)?;
    let line = read_line(r)?;
    let fields: Vec<(&str, &str)> = line
        .split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::Corrupt(format!("manifest token {kv:?}")))
        })
        .collect::<Result<_>>()?;
    let cell: CellKind = manifest_field(&fields, "cell")?
        .parse()
        .map_err(|e: Error| Error::Corrupt(e.to_string()))?;
    let hidden = manifest_num(&fields, "hidden")?;
    let layers = manifest_num(&fields, "layers")?;
    let vocab_size = manifest_num(&fields, "vocab")?;
    let block_h = manifest_num(&fields, "block_h")?;
    let block_w = manifest_num(&fields, "block_w")?;
    let vocab = Vocab::with_size(unhex(manifest_field(&fields, "vocab_bytes")?)?, vocab_size)?;
    let mut model = RecurrentModel::zeros(cell, vocab_size, hidden, layers)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    if manifest_num(&fields, "params")? != model.params().len() {
        return Err(Error::Corrupt("parameter count does not match the architecture".into()));
    }
    let prunable = model.prunable();
    if manifest_num(&fields, "masks")? != prunable.len() {
        return Err(Error::Corrupt("mask count does not match the architecture".into()));
    }

    let mut params = Vec::with_capacity(model.params().len());
    for (i, name) in model.names().iter().enumerate() {
        expect_label(r, "param", name)?;
        let m = read_record(r)?.to_dense();
        if m.shape() != model.params()[i].shape() {
            return Err(Error::Corrupt(format!(
                "{name} is {:?}, expected {:?}",
                m.shape(),
                model.params()[i].shape()
            )));
        }
        params.push(m);
    }
    let mut masks = Vec::with_capacity(prunable.len());
    for &i in &prunable {
        expect_label(r, "mask", &model.names()[i])?;
        let grid = read_record(r)?.to_dense();
        let expected = model.params()[i].block_grid(block_h, block_w)?;
        if grid.shape() != expected {
            return Err(Error::Corrupt(format!("mask for {} has the wrong grid", model.names()[i])));
        }
        let kept = grid.values().iter().map(|&v| v != 0.0).collect();
        masks.push(BlockMask::from_kept(expected.0, expected.1, block_h, block_w, kept)?);
    }
    model.set_params(params)?;
    Ok(Checkpoint {
        config_hash: manifest_field(&fields, "config_hash")?.to_string(),
        model,
        vocab,
        block_h,
        block_w,
        masks,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ck, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(cell: CellKind) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab = Vocab::build(b"hello world", 4);
        let mut model = RecurrentModel::new(cell, vocab.size(), 8, 2, &mut rng).unwrap();
        // kill a few blocks
        let u = model.index_of("l0.u").or(model.index_of("l0.u_z")).unwrap();
        model.params_mut()[u].row_mut(0)[..4].fill(0.0);
        model.params_mut()[u].row_mut(1)[..4].fill(0.0);
        Checkpoint::from_model("abc123", model, vocab, 2, 4).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for cell in [CellKind::Rnn, CellKind::Gru] {
            let ck = sample(cell);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &ck, Dtype::F64).unwrap();
            let back = read_checkpoint(&mut &buf[..]).unwrap();
            assert_eq!(back, ck);
            let mut again = Vec::new();
            write_checkpoint(&mut again, &back, Dtype::F64).unwrap();
            assert_eq!(again, buf);
            assert_eq!(back.masks[1].dead_blocks(), 1);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let ck = sample(CellKind::Rnn);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck, Dtype::F64).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
        assert!(read_checkpoint(&mut &b"BSNN2\n"[..]).is_err());
        let text = String::from_utf8_lossy(&buf).replacen("layers=2", "layers=3", 1);
        assert!(read_checkpoint(&mut text.as_bytes()).is_err());
    }
}
