//! Errors carrying the process exit code of their family.

use std::path::Path;

use tabformer::baseline::BaselineError;
use tabformer::data::DataError;
use tabformer::inference::InferenceError;
use tabformer::midi::MidiError;
use tabformer::model::ModelError;

pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const FORMAT: u8 = 4;
pub const MODEL: u8 = 5;
pub const DOMAIN: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new<E: std::error::Error + Send + Sync + 'static>(code: u8, error: E) -> Self {
        Self {
            code,
            error: anyhow::Error::new(error),
        }
    }

    pub fn msg(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            error: anyhow::anyhow!("{message}"),
        }
    }

    pub fn io(path: &Path, error: std::io::Error) -> Self {
        Self {
            code: IO,
            error: anyhow::Error::new(error).context(path.display().to_string()),
        }
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(self, path: &Path) -> Self {
        Self {
            code: self.code,
            error: self.error.context(path.display().to_string()),
        }
    }
}

impl From<MidiError> for Failure {
    fn from(e: MidiError) -> Self {
        let code = if matches!(e, MidiError::Domain(_)) { DOMAIN } else { FORMAT };
        Self::new(code, e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Checkpoint(_) | ModelError::CheckpointVersion(_) => FORMAT,
            _ => MODEL,
        };
        Self::new(code, e)
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::UnplayablePitch { .. } => Self::new(DOMAIN, e),
            InferenceError::Model(m) => m.into(),
            InferenceError::VocabularyMismatch { .. } => Self::new(MODEL, e),
        }
    }
}

impl From<BaselineError> for Failure {
    fn from(e: BaselineError) -> Self {
        let code = if matches!(e, BaselineError::InvalidCostModel(_)) { USAGE } else { DOMAIN };
        Self::new(code, e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => Self::new(IO, e),
            DataError::Midi(m) => m.into(),
            DataError::Baseline(b) => b.into(),
            DataError::Format { .. } => Self::new(FORMAT, e),
            DataError::Config(_) => Self::new(USAGE, e),
        }
    }
}
