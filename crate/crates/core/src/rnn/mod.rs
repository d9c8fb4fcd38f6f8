//! Character-level recurrent language models (vanilla RNN and GRU).

pub mod backprop;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod infer;
pub mod model;
pub mod optim;
pub mod train;

pub use backprop::{data_loss, forward_backward, regularization, ForwardBackward};
pub use config::{PruneConfig, TrainingConfig};
pub use data::{split_corpus, synthetic_corpus, Batch, StreamBatcher, Vocab};
pub use infer::{evaluate, evaluate_bsr, InferenceNet, LinearOp, EVAL_LANES};
pub use model::{gru_cell_forward, rnn_cell_forward, CellKind, GateIdx, GruParams, ParamRole, RecurrentModel};
pub use optim::{clip_global_norm, nesterov_step, NesterovMomentum};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use train::{
    derive_hyper, iters_per_epoch, layer_sparsities, load_corpus, planned_hyper, resolve_schedule, model_block_sparsity, prune_to_sparsity, train, train_with,
    Divergence, IterationRecord, LayerSparsity, RunReport, TrainOutcome,
};
