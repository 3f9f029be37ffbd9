//! Structured-style tokenization with string tokens.
//!
//! Every note becomes five tokens in the fixed order
//! `TIME_SHIFT, STRING, PITCH, VELOCITY, DURATION`, so string tokens always
//! sit at positions `5k + 1`. Times are quantized on an eighth-of-a-beat grid
//! up to four beats, a half-beat grid up to twelve beats, and one overflow
//! bin beyond that.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fretboard::{DomainError, Note, TabNote, TabSequence, Tuning, STRING_COUNT};

/// Tokens emitted per note.
pub const TOKENS_PER_NOTE: usize = 5;
/// Offset of the string token inside a note's five-token frame.
pub const STRING_SLOT: usize = 1;
/// Internal ticks per quarter note: 24 ticks per eighth of a beat.
pub const INTERNAL_TICKS_PER_BEAT: u64 = 192;
/// Number of velocity bins spanning 1..=127.
pub const VELOCITY_BINS: u8 = 8;

const VOCAB_VERSION: u32 = 1;

/// Units are eighths of a beat. Fine grid to 4 beats, half-beat grid to 12.
const FINE_MAX_UNITS: u32 = 32;
const COARSE_MAX_UNITS: u32 = 96;
const COARSE_STEP_UNITS: u32 = 4;
/// Decoded value of the overflow bin (12.5 beats).
const OVERFLOW_UNITS: u32 = COARSE_MAX_UNITS + COARSE_STEP_UNITS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("token id {id} at index {index} is outside the vocabulary")]
    UnknownId { index: usize, id: u32 },
    #[error("token at index {index} is {found}, expected a {expected} token")]
    FamilyCycle {
        index: usize,
        expected: Family,
        found: Family,
    },
    #[error("sequence length {0} is not a multiple of 5")]
    RaggedLength(usize),
    #[error("masked string token at index {0}")]
    MaskedString(usize),
    #[error("ticks per quarter must be positive")]
    ZeroTicksPerQuarter,
    #[error("vocabulary table is invalid: {0}")]
    BadVocabulary(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Token family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Pad,
    Bos,
    Eos,
    String,
    StringMask,
    TimeShift,
    Pitch,
    Velocity,
    Duration,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Family::Pad => "PAD",
            Family::Bos => "BOS",
            Family::Eos => "EOS",
            Family::String => "STRING",
            Family::StringMask => "STRING_MASK",
            Family::TimeShift => "TIME_SHIFT",
            Family::Pitch => "PITCH",
            Family::Velocity => "VELOCITY",
            Family::Duration => "DURATION",
        };
        f.write_str(name)
    }
}

/// A decoded token. Time-shift and duration carry bin indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    String(u8),
    StringMask,
    TimeShift(u16),
    Pitch(u8),
    Velocity(u8),
    Duration(u16),
}

impl Token {
    pub fn family(&self) -> Family {
        match self {
            Token::Pad => Family::Pad,
            Token::Bos => Family::Bos,
            Token::Eos => Family::Eos,
            Token::String(_) => Family::String,
            Token::StringMask => Family::StringMask,
            Token::TimeShift(_) => Family::TimeShift,
            Token::Pitch(_) => Family::Pitch,
            Token::Velocity(_) => Family::Velocity,
            Token::Duration(_) => Family::Duration,
        }
    }

    fn value(&self) -> u32 {
        match *self {
            Token::String(v) | Token::Pitch(v) | Token::Velocity(v) => v as u32,
            Token::TimeShift(v) | Token::Duration(v) => v as u32,
            _ => 0,
        }
    }

    fn from_parts(family: Family, value: u32) -> Option<Token> {
        Some(match family {
            Family::Pad => Token::Pad,
            Family::Bos => Token::Bos,
            Family::Eos => Token::Eos,
            Family::StringMask => Token::StringMask,
            Family::String => Token::String(u8::try_from(value).ok()?),
            Family::Pitch => Token::Pitch(u8::try_from(value).ok()?),
            Family::Velocity => Token::Velocity(u8::try_from(value).ok()?),
            Family::TimeShift => Token::TimeShift(u16::try_from(value).ok()?),
            Family::Duration => Token::Duration(u16::try_from(value).ok()?),
        })
    }
}

/// Bin values (eighth-beat units) for time shifts, including zero.
fn time_shift_bins() -> &'static [u32] {
    static BINS: OnceLock<Vec<u32>> = OnceLock::new();
    BINS.get_or_init(|| {
        let mut v: Vec<u32> = (0..=FINE_MAX_UNITS).collect();
        v.extend((FINE_MAX_UNITS + COARSE_STEP_UNITS..=COARSE_MAX_UNITS).step_by(COARSE_STEP_UNITS as usize));
        v.push(OVERFLOW_UNITS);
        v
    })
}

/// Bin values (eighth-beat units) for durations; zero is not a duration.
fn duration_bins() -> &'static [u32] {
    static BINS: OnceLock<Vec<u32>> = OnceLock::new();
    BINS.get_or_init(|| time_shift_bins()[1..].to_vec())
}

/// Nearest bin index, ties to the lower bin. The last bin is the overflow
/// bin; the flag reports whether it was chosen.
fn nearest_bin(bins: &[u32], units_x2: u64) -> (usize, bool) {
    let mut best = 0;
    let mut best_dist = u64::MAX;
    for (i, &b) in bins.iter().enumerate() {
        let d = (b as u64 * 2).abs_diff(units_x2);
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    (best, best == bins.len() - 1)
}

/// Velocity bin 0..8 over [1, 127].
pub fn velocity_bin(velocity: u8) -> u8 {
    let v = velocity.clamp(1, 127) as u32;
    (((v - 1) * VELOCITY_BINS as u32) / 127) as u8
}

/// Representative velocity of a bin (its centre).
pub fn velocity_of_bin(bin: u8) -> u8 {
    (1 + ((2 * bin as u32 + 1) * 127) / (2 * VELOCITY_BINS as u32)) as u8
}

/// Bidirectional map between token ids and tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: HashMap<Token, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabEntry {
    family: Family,
    value: u32,
    id: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabTable {
    version: u32,
    entries: Vec<VocabEntry>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut tokens = vec![Token::Pad, Token::Bos, Token::Eos];
        tokens.extend((1..=STRING_COUNT as u8).map(Token::String));
        tokens.push(Token::StringMask);
        tokens.extend((0..time_shift_bins().len() as u16).map(Token::TimeShift));
        tokens.extend((0..=127u8).map(Token::Pitch));
        tokens.extend((0..VELOCITY_BINS).map(Token::Velocity));
        tokens.extend((0..duration_bins().len() as u16).map(Token::Duration));
        Self::from_tokens(tokens).expect("built-in vocabulary is bijective")
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<Token>) -> Result<Self, TokenError> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(*t, i as u32).is_some() {
                return Err(TokenError::BadVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: Token) -> u32 {
        self.ids[&token]
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        self.tokens.get(id as usize).copied()
    }

    pub fn pad_id(&self) -> u32 {
        self.id(Token::Pad)
    }

    pub fn bos_id(&self) -> u32 {
        self.id(Token::Bos)
    }

    pub fn mask_id(&self) -> u32 {
        self.id(Token::StringMask)
    }

    /// Ids of `STRING_1..STRING_6`, string 1 first.
    pub fn string_ids(&self) -> [u32; STRING_COUNT] {
        std::array::from_fn(|i| self.id(Token::String(i as u8 + 1)))
    }

    pub fn family(&self, id: u32) -> Option<Family> {
        self.token(id).map(|t| t.family())
    }

    /// Versioned JSON table of `(family, value, id)` entries.
    pub fn to_json(&self) -> String {
        let table = VocabTable {
            version: VOCAB_VERSION,
            entries: self
                .tokens
                .iter()
                .enumerate()
                .map(|(id, t)| VocabEntry {
                    family: t.family(),
                    value: t.value(),
                    id: id as u32,
                })
                .collect(),
        };
        serde_json::to_string(&table).expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, TokenError> {
        let table: VocabTable =
            serde_json::from_str(json).map_err(|e| TokenError::BadVocabulary(e.to_string()))?;
        if table.version != VOCAB_VERSION {
            return Err(TokenError::BadVocabulary(format!(
                "unsupported version {}",
                table.version
            )));
        }
        let mut tokens = vec![None; table.entries.len()];
        for e in &table.entries {
            let slot = tokens.get_mut(e.id as usize).ok_or_else(|| {
                TokenError::BadVocabulary(format!("id {} out of range", e.id))
            })?;
            let token = Token::from_parts(e.family, e.value).ok_or_else(|| {
                TokenError::BadVocabulary(format!("bad value {} for {}", e.value, e.family))
            })?;
            if slot.replace(token).is_some() {
                return Err(TokenError::BadVocabulary(format!("duplicate id {}", e.id)));
            }
        }
        let tokens = tokens
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| TokenError::BadVocabulary("ids are not contiguous".into()))?;
        Self::from_tokens(tokens)
    }

    /// SHA-256 of the canonical JSON table, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

/// A token-id stream of whole notes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub note_count: usize,
}

impl TokenSequence {
    pub fn empty() -> Self {
        Self {
            ids: Vec::new(),
            note_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions of string tokens: `5k + 1`.
    pub fn string_positions(&self) -> impl Iterator<Item = usize> {
        (0..self.note_count).map(|k| TOKENS_PER_NOTE * k + STRING_SLOT)
    }
}

/// Whether `position` in a note-framed stream holds a string token.
pub fn is_string_position(position: usize) -> bool {
    position % TOKENS_PER_NOTE == STRING_SLOT
}

const FAMILY_CYCLE: [Family; TOKENS_PER_NOTE] = [
    Family::TimeShift,
    Family::String,
    Family::Pitch,
    Family::Velocity,
    Family::Duration,
];

/// Counts of values clamped into the overflow bins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampStats {
    pub time_shift_overflows: usize,
    pub duration_overflows: usize,
}

/// Converts between notes and tokens at a given MIDI resolution.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocabulary,
    ticks_per_quarter: u64,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, ticks_per_quarter: u16) -> Result<Self, TokenError> {
        if ticks_per_quarter == 0 {
            return Err(TokenError::ZeroTicksPerQuarter);
        }
        Ok(Self {
            vocab,
            ticks_per_quarter: ticks_per_quarter as u64,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn ticks_per_quarter(&self) -> u16 {
        self.ticks_per_quarter as u16
    }

    /// Ticks in doubled eighth-beat units, i.e. sixteenths of a beat.
    fn ticks_to_units_x2(&self, ticks: u64) -> u64 {
        let num = ticks as u128 * 16;
        let q = num / self.ticks_per_quarter as u128;
        // round half up on the sixteenth grid
        let r = num % self.ticks_per_quarter as u128;
        (q + u128::from(2 * r >= self.ticks_per_quarter as u128)).min(u64::MAX as u128) as u64
    }

    fn units_to_ticks(&self, units: u32) -> u64 {
        // round to the nearest tick; exact when tpq is a multiple of 8
        (units as u64 * self.ticks_per_quarter * 2 + 8) / 16
    }

    /// Encodes notes with one token per slot; `string_token(i)` supplies the
    /// string slot of note `i`. Onsets are taken relative to zero.
    pub fn encode_notes<F>(&self, notes: &[Note], mut string_token: F) -> (TokenSequence, ClampStats)
    where
        F: FnMut(usize) -> Token,
    {
        let mut stats = ClampStats::default();
        let mut ids = Vec::with_capacity(notes.len() * TOKENS_PER_NOTE);
        // quantization error is fed forward so onsets never drift
        let mut reconstructed: u64 = 0;
        for (i, note) in notes.iter().enumerate() {
            let delta = note.onset.saturating_sub(reconstructed);
            let (shift_bin, overflow) = nearest_bin(time_shift_bins(), self.ticks_to_units_x2(delta));
            if overflow {
                stats.time_shift_overflows += 1;
            }
            reconstructed += self.units_to_ticks(time_shift_bins()[shift_bin]);

            let (dur_bin, overflow) = nearest_bin(duration_bins(), self.ticks_to_units_x2(note.duration));
            if overflow {
                stats.duration_overflows += 1;
            }
            ids.push(self.vocab.id(Token::TimeShift(shift_bin as u16)));
            ids.push(self.vocab.id(string_token(i)));
            ids.push(self.vocab.id(Token::Pitch(note.pitch)));
            ids.push(self.vocab.id(Token::Velocity(velocity_bin(note.velocity))));
            ids.push(self.vocab.id(Token::Duration(dur_bin as u16)));
        }
        if stats.time_shift_overflows + stats.duration_overflows > 0 {
            log::warn!(
                "clamped {} time shifts and {} durations to the overflow bin",
                stats.time_shift_overflows,
                stats.duration_overflows
            );
        }
        (
            TokenSequence {
                ids,
                note_count: notes.len(),
            },
            stats,
        )
    }

    /// Tokenizes a canonically sorted tablature.
    pub fn tokenize(&self, tab: &TabSequence) -> (TokenSequence, ClampStats) {
        let notes = tab.plain_notes();
        self.encode_notes(&notes, |i| Token::String(tab.notes[i].string))
    }

    /// Tokenizes notes with every string slot masked.
    pub fn tokenize_masked(&self, notes: &[Note]) -> (TokenSequence, ClampStats) {
        self.encode_notes(notes, |_| Token::StringMask)
    }

    /// Checks the family cycle; returns decoded tokens.
    pub fn check_structure(&self, ids: &[u32]) -> Result<Vec<Token>, TokenError> {
        if ids.len() % TOKENS_PER_NOTE != 0 {
            return Err(TokenError::RaggedLength(ids.len()));
        }
        ids.iter()
            .enumerate()
            .map(|(index, &id)| {
                let token = self
                    .vocab
                    .token(id)
                    .ok_or(TokenError::UnknownId { index, id })?;
                let expected = FAMILY_CYCLE[index % TOKENS_PER_NOTE];
                let found = token.family();
                let ok = found == expected
                    || (expected == Family::String && found == Family::StringMask);
                if ok {
                    Ok(token)
                } else {
                    Err(TokenError::FamilyCycle {
                        index,
                        expected,
                        found,
                    })
                }
            })
            .collect()
    }

    /// Decodes plain notes, ignoring the string slots.
    pub fn decode_notes(&self, ids: &[u32]) -> Result<Vec<Note>, TokenError> {
        let tokens = self.check_structure(ids)?;
        let mut notes = Vec::with_capacity(tokens.len() / TOKENS_PER_NOTE);
        let mut onset = 0u64;
        for frame in tokens.chunks_exact(TOKENS_PER_NOTE) {
            let (Token::TimeShift(shift), Token::Pitch(pitch), Token::Velocity(vel), Token::Duration(dur)) =
                (frame[0], frame[2], frame[3], frame[4])
            else {
                unreachable!("family cycle checked above")
            };
            onset += self.units_to_ticks(time_shift_bins()[shift as usize]);
            let duration = self.units_to_ticks(duration_bins()[dur as usize]).max(1);
            notes.push(Note::new(onset, duration, pitch, velocity_of_bin(vel))?);
        }
        Ok(notes)
    }

    /// Reconstructs a tablature with quantized timing and velocities.
    pub fn detokenize(&self, tokens: &TokenSequence, tuning: &Tuning) -> Result<TabSequence, TokenError> {
        let decoded = self.check_structure(&tokens.ids)?;
        let notes = self.decode_notes(&tokens.ids)?;
        let mut tab = Vec::with_capacity(notes.len());
        for (k, note) in notes.into_iter().enumerate() {
            let index = k * TOKENS_PER_NOTE + STRING_SLOT;
            match decoded[index] {
                Token::String(s) => tab.push(TabNote::new(note, s, tuning)?),
                _ => return Err(TokenError::MaskedString(index)),
            }
        }
        Ok(TabSequence::new(*tuning, tab))
    }
}

/// Replaces every string token with `STRING_MASK`.
pub fn mask_strings(tokens: &TokenSequence, vocab: &Vocabulary) -> TokenSequence {
    let mask = vocab.mask_id();
    let mut ids = tokens.ids.clone();
    for p in tokens.string_positions() {
        if let Some(id) = ids.get_mut(p) {
            *id = mask;
        }
    }
    TokenSequence {
        ids,
        note_count: tokens.note_count,
    }
}
