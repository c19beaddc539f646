use std::fmt;
use std::path::Path;

use linerec::ctc::CtcError;
use linerec::dataset::{DictError, ManifestError, StoreError};
use linerec::eval::EvalError;
use linerec::infer::InferError;
use linerec::model::CheckpointError;
use linerec::synth::SynthError;
use linerec::train::{ConfigError, TrainError};
use linerec_server::ServerError;

/// A failed stage: a stable machine-readable code plus a human message.
#[derive(Debug)]
pub struct StageError {
    pub code: &'static str,
    pub message: String,
}

impl StageError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("IO", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message.replace('\n', " "))
    }
}

macro_rules! code_from {
    ($t:ty, $code:expr) => {
        impl From<$t> for StageError {
            fn from(e: $t) -> Self {
                Self::new($code, e.to_string())
            }
        }
    };
}

code_from!(SynthError, "SYNTH");
code_from!(ManifestError, "MANIFEST");
code_from!(DictError, "DICT");
code_from!(ConfigError, "CONFIG");
code_from!(EvalError, "EVAL");
code_from!(ServerError, "SERVER");
code_from!(CtcError, "DECODE");

impl From<StoreError> for StageError {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::DuplicateKey(_) => "DUPLICATE_KEY",
            StoreError::Io { .. } => "IO",
            _ => "STORE_CORRUPT",
        };
        Self::new(code, e.to_string())
    }
}

impl From<CheckpointError> for StageError {
    fn from(e: CheckpointError) -> Self {
        let code = match e {
            CheckpointError::Io { .. } => "IO",
            CheckpointError::DictMismatch => "DICT_MISMATCH",
            _ => "CHECKPOINT_CORRUPT",
        };
        Self::new(code, e.to_string())
    }
}

impl From<InferError> for StageError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::Checkpoint(c) => c.into(),
            InferError::UndecodableImage(_) => Self::new("UNDECODABLE_IMAGE", e.to_string()),
            InferError::DictMismatch => Self::new("DICT_MISMATCH", e.to_string()),
            other => Self::new("INFERENCE", other.to_string()),
        }
    }
}

impl From<TrainError> for StageError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::EmptyTrainSet => "EMPTY_TRAIN_SET",
            TrainError::DictMismatch(_) => "DICT_MISMATCH",
            TrainError::NonFiniteGradient { .. } => "NON_FINITE_GRADIENT",
            TrainError::Config(_) => "CONFIG",
            TrainError::BadRecord { .. } => "BAD_RECORD",
            TrainError::UnknownRecord(_) => "UNKNOWN_RECORD",
            _ => "TRAIN",
        };
        Self::new(code, e.to_string())
    }
}
