//! Guitar tablature from MIDI: a string-masked encoder-decoder transformer
//! with windowed beam decoding, a rule-based fix-up pass, a Viterbi
//! baseline, and metrics for comparing tablatures.

pub mod baseline;
pub mod data;
pub mod evaluation;
pub mod fretboard;
pub mod inference;
pub mod midi;
pub mod model;
pub mod postprocess;
pub mod render;
pub mod tokenizer;

pub use fretboard::{
    canonical_sort, feasible_strings, fret_for, DomainError, Note, TabNote, TabSequence, Tuning,
};
