use serde::Serialize;

use crate::error::{Error, Result};

/// CSR keeps roughly one column index plus an amortized row pointer per stored unit.
pub const CSR_INDICES_PER_UNIT: u32 = 2;

/// Index storage relative to value storage for a sparse format whose index
/// entries are shared by every element of a `block_h × block_w` block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadReport {
    pub value_bits: u32,
    pub index_bits: u32,
    pub block_h: usize,
    pub block_w: usize,
    pub indices_per_unit: u32,
    pub overhead_ratio: f64,
}

pub fn indexing_overhead(
    value_bits: u32,
    index_bits: u32,
    block_h: usize,
    block_w: usize,
    indices_per_unit: u32,
) -> Result<OverheadReport> {
    if value_bits == 0 || index_bits == 0 || block_h == 0 || block_w == 0 || indices_per_unit == 0
    {
        return Err(Error::InvalidArgument(
            "overhead inputs must all be positive".into(),
        ));
    }
    let index_storage = f64::from(indices_per_unit) * f64::from(index_bits);
    let value_storage = f64::from(value_bits) * (block_h * block_w) as f64;
    Ok(OverheadReport {
        value_bits,
        index_bits,
        block_h,
        block_w,
        indices_per_unit,
        overhead_ratio: index_storage / value_storage,
    })
}
