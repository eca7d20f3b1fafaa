//! Dual-text contrastive alignment: each clip is pulled towards both its
//! subtitle and its caption with symmetric info-NCE, and trained with AdamW.

mod loss;
mod model;
pub mod optim;
mod synthetic;
mod train;

pub use loss::{info_nce, trace_info_nce};
pub use model::{
    embed_batch, loss_and_grads, total_loss, trace_total_loss, AlignmentBatch, LossGraph,
    ModelConfig, ModelParams,
};
pub use synthetic::{synthetic_pairs, synthetic_vocab, BUCKETS, LATENT_DIM};
pub use train::{decays, parse_kv, trace_csv, train, TraceRow, TrainConfig, LOG_TAU_FLOOR};
