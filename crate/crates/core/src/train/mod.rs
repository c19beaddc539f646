//! Training: the combined CTC and distillation objective, AdamW, and the
//! epoch loop with loss tracing.

mod adamw;
mod config;
mod distill;
mod trainer;

pub use adamw::{adamw_step, AdamW};
pub use config::{parse_kv, ConfigError, TrainConfig};
pub use distill::{distill_loss, DistillOutput};
pub use trainer::{
    evaluate_exact, prepare_samples, train, train_prepared, EpochSummary, LossRecord, LossTrace, PreparedSample, TrainOutcome,
};

use thiserror::Error;

use crate::ctc::CtcError;
use crate::infer::InferError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("dictionary mismatch: {0}")]
    DictMismatch(String),
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("record {key:?} could not be decoded: {reason}")]
    BadRecord { key: String, reason: String },
    #[error("split references unknown record {0:?}")]
    UnknownRecord(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Infer(#[from] InferError),
}
