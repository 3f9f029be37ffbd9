//! Sliding-window decoding with a small beam over string choices.
//!
//! A piece is covered by 50-note windows advanced 10 notes at a time. Each
//! window predicts one slice of notes (normally its centre tenth-to-fifth),
//! keeping every earlier assignment fixed, and commits its best path before
//! the next window starts.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fretboard::{canonical_sort, feasible_strings, Note, TabSequence, Tuning, STRING_COUNT};
use crate::model::{string_probabilities, DecoderState, ModelError, Transformer};
use crate::tokenizer::{Token, Tokenizer, TOKENS_PER_NOTE};

pub const WINDOW_NOTES: usize = 50;
pub const QUINTILE_NOTES: usize = 10;
pub const STRIDE_NOTES: usize = 10;
pub const DEFAULT_BEAM_WIDTH: usize = 32;
pub const DEFAULT_TOP_K: usize = 2;

/// Window-local offset of the first predicted note in interior windows.
const CENTRE_OFFSET: usize = 2 * QUINTILE_NOTES;
/// The first window also predicts the two quintiles before its centre.
const FIRST_PREDICT_END: usize = 3 * QUINTILE_NOTES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("note {index} (pitch {pitch}) has no playable string in this tuning")]
    UnplayablePitch { index: usize, pitch: u8 },
    #[error("model vocabulary has {model} tokens but the tokenizer has {tokenizer}")]
    VocabularyMismatch { model: usize, tokenizer: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One window: the notes it sees and the notes it predicts (absolute indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub notes: Range<usize>,
    pub predict: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_size_notes: usize,
    pub quintile_size_notes: usize,
    pub stride_notes: usize,
    pub windows: Vec<Window>,
}

/// Windows for a piece of `note_count` notes. The predict ranges partition
/// `0..note_count`.
pub fn plan_windows(note_count: usize) -> WindowPlan {
    let mut windows = Vec::new();
    if note_count > 0 && note_count <= WINDOW_NOTES {
        windows.push(Window {
            notes: 0..note_count,
            predict: 0..note_count,
        });
    } else if note_count > WINDOW_NOTES {
        windows.push(Window {
            notes: 0..WINDOW_NOTES,
            predict: 0..FIRST_PREDICT_END,
        });
        let mut start = STRIDE_NOTES;
        while start + WINDOW_NOTES < note_count {
            windows.push(Window {
                notes: start..start + WINDOW_NOTES,
                predict: start + CENTRE_OFFSET..start + CENTRE_OFFSET + QUINTILE_NOTES,
            });
            start += STRIDE_NOTES;
        }
        let predicted = windows.last().expect("first window").predict.end;
        windows.push(Window {
            notes: note_count - WINDOW_NOTES..note_count,
            predict: predicted..note_count,
        });
    }
    WindowPlan {
        window_size_notes: WINDOW_NOTES,
        quintile_size_notes: QUINTILE_NOTES,
        stride_notes: STRIDE_NOTES,
        windows,
    }
}

/// A partial assignment of strings within one predict range.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeamPath {
    pub assignments: Vec<u8>,
    /// Log-probability of each choice.
    pub log_probs: Vec<f64>,
    /// Running sum of `log_probs`.
    pub score: f64,
}

impl BeamPath {
    pub fn extend(&self, string: u8, log_prob: f64) -> Self {
        let mut next = self.clone();
        next.assignments.push(string);
        next.log_probs.push(log_prob);
        next.score += log_prob;
        next
    }
}

/// Sum of the log-probabilities of the chosen strings.
pub fn score_path(path: &BeamPath) -> f64 {
    path.log_probs.iter().sum()
}

/// Higher score first; ties go to the lexicographically smaller assignment.
fn path_order(a: &BeamPath, b: &BeamPath) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.assignments.cmp(&b.assignments))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub beam_width: usize,
    /// Candidates kept per note and path.
    pub top_k: usize,
    /// Restrict candidates to strings where the pitch is playable.
    pub feasibility_mask: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            beam_width: DEFAULT_BEAM_WIDTH,
            top_k: DEFAULT_TOP_K,
            feasibility_mask: true,
        }
    }
}

impl InferenceConfig {
    pub fn greedy() -> Self {
        Self {
            beam_width: 1,
            top_k: 1,
            ..Self::default()
        }
    }
}

/// String probabilities restricted to `allowed` and renormalized, most
/// likely first (ties to the lower string).
pub fn renormalize(probs: &[f64; STRING_COUNT], allowed: &[u8]) -> Vec<(u8, f64)> {
    let total: f64 = allowed.iter().map(|&s| probs[s as usize - 1]).sum();
    let mut out: Vec<(u8, f64)> = allowed
        .iter()
        .map(|&s| {
            let p = if total > 0.0 {
                probs[s as usize - 1] / total
            } else {
                1.0 / allowed.len() as f64
            };
            (s, p)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

const ALL_STRINGS: [u8; STRING_COUNT] = [1, 2, 3, 4, 5, 6];

/// Predicts a string for every note. The result keeps the input notes and
/// is flagged `unvalidated`.
pub fn predict_piece(
    notes: &[Note],
    model: &Transformer,
    tokenizer: &Tokenizer,
    tuning: &Tuning,
    config: &InferenceConfig,
) -> Result<TabSequence, InferenceError> {
    let vocab = tokenizer.vocab();
    if model.config().vocab_size != vocab.len() {
        return Err(InferenceError::VocabularyMismatch {
            model: model.config().vocab_size,
            tokenizer: vocab.len(),
        });
    }
    let mut notes = notes.to_vec();
    canonical_sort(&mut notes);
    let feasible: Vec<Vec<u8>> = notes.iter().map(|n| feasible_strings(n.pitch, tuning)).collect();
    if let Some(index) = feasible.iter().position(Vec::is_empty) {
        return Err(InferenceError::UnplayablePitch {
            index,
            pitch: notes[index].pitch,
        });
    }
    let string_ids = vocab.string_ids();
    let beam_width = config.beam_width.max(1);
    let top_k = config.top_k.max(1);
    let mut strings = vec![0u8; notes.len()];

    for window in plan_windows(notes.len()).windows {
        let base = notes[window.notes.start].onset;
        let local: Vec<Note> = notes[window.notes.clone()]
            .iter()
            .map(|n| Note {
                onset: n.onset - base,
                ..*n
            })
            .collect();
        let ids = tokenizer.tokenize_masked(&local).0.ids;
        let memory = model.encoder_memory(&ids)?;
        let first = window.predict.start - window.notes.start;
        let last = window.predict.end - window.notes.start;

        let mut prefix = vec![vocab.bos_id()];
        for k in 0..first {
            let frame = &ids[k * TOKENS_PER_NOTE..(k + 1) * TOKENS_PER_NOTE];
            prefix.push(frame[0]);
            prefix.push(vocab.id(Token::String(strings[window.notes.start + k])));
            prefix.extend_from_slice(&frame[2..]);
        }
        prefix.push(ids[first * TOKENS_PER_NOTE]);
        let mut states = vec![model.empty_state()];
        let mut logits = model.decode_step(&memory, &mut states, &[prefix])?;
        let mut paths = vec![BeamPath::default()];

        for k in first..last {
            let global = window.notes.start + k;
            let allowed: &[u8] = if config.feasibility_mask {
                &feasible[global]
            } else {
                &ALL_STRINGS
            };
            let mut children: Vec<(usize, BeamPath)> = Vec::new();
            for (parent, path) in paths.iter().enumerate() {
                let probs = string_probabilities(logits[parent].view(), &string_ids);
                for &(s, p) in renormalize(&probs, allowed).iter().take(top_k) {
                    children.push((parent, path.extend(s, p.max(f64::MIN_POSITIVE).ln())));
                }
            }
            children.sort_by(|a, b| path_order(&a.1, &b.1));
            children.truncate(beam_width);

            if k + 1 < last {
                let frame = &ids[k * TOKENS_PER_NOTE..(k + 1) * TOKENS_PER_NOTE];
                let next_shift = ids[(k + 1) * TOKENS_PER_NOTE];
                let tokens: Vec<Vec<u32>> = children
                    .iter()
                    .map(|(_, path)| {
                        let s = *path.assignments.last().expect("extended");
                        vec![vocab.id(Token::String(s)), frame[2], frame[3], frame[4], next_shift]
                    })
                    .collect();
                let mut next_states = fork_states(states, children.iter().map(|(p, _)| *p));
                logits = model.decode_step(&memory, &mut next_states, &tokens)?;
                states = next_states;
            }
            paths = children.into_iter().map(|(_, path)| path).collect();
        }
        let best = &paths[0];
        strings[window.predict.clone()].copy_from_slice(&best.assignments);
    }

    let mut tab = TabSequence::from_assignments(*tuning, &notes, &strings).expect("strings come from 1..=6");
    tab.unvalidated = true;
    Ok(tab)
}

/// One state per child: the last child of each parent takes the parent's
/// state, the others clone it.
fn fork_states(states: Vec<DecoderState>, parents: impl Iterator<Item = usize>) -> Vec<DecoderState> {
    let parents: Vec<usize> = parents.collect();
    let mut remaining = vec![0usize; states.len()];
    for &p in &parents {
        remaining[p] += 1;
    }
    let mut pool: Vec<Option<DecoderState>> = states.into_iter().map(Some).collect();
    parents
        .into_iter()
        .map(|p| {
            remaining[p] -= 1;
            if remaining[p] == 0 {
                pool[p].take().expect("state taken once")
            } else {
                pool[p].clone().expect("state still present")
            }
        })
        .collect()
}
