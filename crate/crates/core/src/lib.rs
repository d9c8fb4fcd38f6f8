//! Block-sparse recurrent networks: sparse storage formats and kernels,
//! gradual block pruning, group-lasso style regularizers and a small
//! character-level RNN/GRU trainer to exercise them.

pub mod error;
pub mod analysis;
pub mod formats;
pub mod pruning;
pub mod regularizers;
pub mod rnn;

pub use error::{Error, Result};
