//! Text-line recognition pipeline: procedural synthetic data, a packed
//! record store, a two-branch convolutional recognizer trained with CTC
//! plus teacher-to-student distillation, evaluation metrics and
//! single-image inference.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`synth`] renders degraded text lines from procedural glyphs.
//! * [`dataset`] cleans manifests, builds the character dictionary, packs
//!   the record store and splits train/validation ids.
//! * [`ctc`] holds the CTC loss, its brute-force oracle and greedy decoding.
//! * [`model`] is the recognizer itself plus its checkpoint format.
//! * [`train`] combines CTC and distillation losses under AdamW.
//! * [`eval`] computes accuracy and confidence reports.
//! * [`infer`] wires preprocessing, the student branch and decoding.

pub mod ctc;
pub mod dataset;
pub mod eval;
pub mod infer;
pub mod model;
pub mod rng;
pub mod synth;
pub mod train;

pub use ctc::{CtcError, FrameLogits, Prediction};
pub use dataset::{CharDict, RecordStore, SplitSpec};
pub use eval::{ComparisonReport, EvalReport};
pub use infer::{LoadedModel, Preprocessed};
pub use model::{ModelParams, Recognizer};
pub use train::{LossTrace, TrainConfig};

/// Height of every text-line image and model input, in pixels.
pub const LINE_HEIGHT: usize = 32;
/// Width of every text-line image and model input, in pixels.
pub const LINE_WIDTH: usize = 280;
/// Colour channels per pixel.
pub const CHANNELS: usize = 3;
/// Library version, reported by the service health endpoint.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
