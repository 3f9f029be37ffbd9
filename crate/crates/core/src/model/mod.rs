//! Encoder-decoder transformer trained to fill in masked string tokens.

mod config;
pub mod layers;
mod checkpoint;
mod params;
mod train;
mod transformer;

pub use config::{ModelConfig, Phase, TrainConfig, EXAMPLE_NOTES, EXAMPLE_TOKENS};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use params::{decays, Attention, DecoderLayer, EncoderLayer, Params, TensorView};
pub use train::{evaluate, lm_inputs, loss_curve_csv, train, AdamW, EpochReport, LossPoint, TrainOutcome, TrainingExample};
pub use transformer::{string_probabilities, DecoderState, EncoderMemory, LossTerms, Transformer};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the model vocabulary")]
    UnknownToken(u32),
    #[error("decoder prefix of length {0} does not end before a string token")]
    NotStringPosition(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss or gradient at step {step} (batch examples {batch:?})")]
    NonFiniteLoss { step: usize, batch: Vec<usize> },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("checkpoint vocabulary {found} does not match {expected}")]
    VocabularyMismatch { expected: String, found: String },
}
