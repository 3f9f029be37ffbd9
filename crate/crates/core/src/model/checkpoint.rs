//! Binary checkpoint: magic, version, JSON header, then little-endian f64
//! tensors in name order.
//!
//! ```text
//! "TABFCKPT" | u32 version | u64 header length | header JSON | tensor data
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Params, Transformer};
use crate::tokenizer::Vocabulary;

const MAGIC: &[u8; 8] = b"TABFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    vocabulary: String,
    step: u64,
    tensors: Vec<TensorEntry>,
}

/// A trained model together with the vocabulary it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Transformer,
    pub vocabulary: Vocabulary,
    pub step: u64,
}

fn corrupt(reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(reason.into())
}

impl Checkpoint {
    pub fn new(model: Transformer, vocabulary: Vocabulary, step: u64) -> Self {
        Self {
            model,
            vocabulary,
            step,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.model.params.tensors();
        let sorted: BTreeMap<&str, _> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let header = Header {
            config: self.model.config().clone(),
            vocab_hash: self.vocabulary.hash(),
            vocabulary: self.vocabulary.to_json(),
            step: self.step,
            tensors: sorted
                .values()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = sorted.values().map(|t| t.data.len() * 8).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in sorted.values() {
            for v in t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::CheckpointVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = 20usize
            .checked_add(usize::try_from(header_len).map_err(|_| corrupt("header length overflow"))?)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let vocabulary =
            Vocabulary::from_json(&header.vocabulary).map_err(|e| corrupt(format!("bad vocabulary: {e}")))?;
        if vocabulary.hash() != header.vocab_hash {
            return Err(corrupt("embedded vocabulary does not match its hash"));
        }
        header.config.validate()?;

        let mut params = Params::zeros(&header.config);
        let mut slots: BTreeMap<String, &mut [f64]> = params.tensors_mut().into_iter().collect();
        if slots.len() != header.tensors.len() {
            return Err(corrupt(format!(
                "expected {} tensors, found {}",
                slots.len(),
                header.tensors.len()
            )));
        }
        let mut offset = header_end;
        for entry in &header.tensors {
            let slot = slots
                .get_mut(&entry.name)
                .ok_or_else(|| corrupt(format!("unexpected tensor {}", entry.name)))?;
            if entry.shape.iter().product::<usize>() != slot.len() {
                return Err(corrupt(format!("tensor {} has shape {:?}", entry.name, entry.shape)));
            }
            let end = offset + slot.len() * 8;
            if end > bytes.len() {
                return Err(corrupt(format!("truncated in tensor {}", entry.name)));
            }
            for (v, chunk) in slot.iter_mut().zip(bytes[offset..end].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            offset = end;
        }
        if offset != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - offset)));
        }
        drop(slots);
        Ok(Self {
            model: Transformer::from_params(header.config, params)?,
            vocabulary,
            step: header.step,
        })
    }

    /// Loads and refuses a checkpoint trained on a different vocabulary.
    pub fn load_for(bytes: &[u8], expected: &Vocabulary) -> Result<Self, ModelError> {
        let ckpt = Self::from_bytes(bytes)?;
        if ckpt.vocabulary.hash() != expected.hash() {
            return Err(ModelError::VocabularyMismatch {
                expected: expected.hash(),
                found: ckpt.vocabulary.hash(),
            });
        }
        Ok(ckpt)
    }
}
