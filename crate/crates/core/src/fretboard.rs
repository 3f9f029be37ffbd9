//! Fretboard arithmetic and the note / tablature data model.
//!
//! Strings are numbered 1..=6 with string 1 being the highest-pitched
//! (high E in standard tuning). A fret is always derived from the pitch and
//! the string: `fret = pitch - open_pitch(string)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of strings on the instrument.
pub const STRING_COUNT: usize = 6;

/// Highest playable fret used when nothing else is configured.
pub const DEFAULT_MAX_FRET: u8 = 21;

/// Open-string pitches of standard tuning, string 1 first (E4 B3 G3 D3 A2 E2).
pub const STANDARD_OPEN_PITCHES: [u8; STRING_COUNT] = [64, 59, 55, 50, 45, 40];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("tuning must list exactly 6 open strings, got {0}")]
    WrongStringCount(usize),
    #[error("open-string pitch {0} is outside the MIDI range 0..=127")]
    PitchOutOfRange(u32),
    #[error("open strings must strictly decrease in pitch from string 1 to 6: {0:?}")]
    NotDescending(Vec<u8>),
    #[error("invalid note: {0}")]
    InvalidNote(String),
    #[error("string {0} is not in 1..=6")]
    InvalidString(u8),
}

/// Ordered table of open-string pitches plus the playable fret limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tuning {
    open_pitches: [u8; STRING_COUNT],
    pub max_fret: u8,
}

impl Default for Tuning {
    fn default() -> Self {
        Self::STANDARD
    }
}

impl Tuning {
    pub const STANDARD: Tuning = Tuning {
        open_pitches: STANDARD_OPEN_PITCHES,
        max_fret: DEFAULT_MAX_FRET,
    };

    pub fn new(open_pitches: &[u8], max_fret: u8) -> Result<Self, DomainError> {
        if open_pitches.len() != STRING_COUNT {
            return Err(DomainError::WrongStringCount(open_pitches.len()));
        }
        if let Some(&p) = open_pitches.iter().find(|&&p| p > 127) {
            return Err(DomainError::PitchOutOfRange(p as u32));
        }
        if open_pitches.windows(2).any(|w| w[0] <= w[1]) {
            return Err(DomainError::NotDescending(open_pitches.to_vec()));
        }
        let mut table = [0u8; STRING_COUNT];
        table.copy_from_slice(open_pitches);
        Ok(Self {
            open_pitches: table,
            max_fret,
        })
    }

    pub fn with_max_fret(mut self, max_fret: u8) -> Self {
        self.max_fret = max_fret;
        self
    }

    pub fn open_pitches(&self) -> &[u8; STRING_COUNT] {
        &self.open_pitches
    }

    /// Open pitch of a 1-based string index.
    pub fn open_pitch(&self, string: u8) -> u8 {
        assert!(
            (1..=STRING_COUNT as u8).contains(&string),
            "string {string} is not in 1..=6"
        );
        self.open_pitches[string as usize - 1]
    }

    /// Pitch sounded by `string` stopped at `fret`.
    pub fn pitch_at(&self, string: u8, fret: u8) -> i32 {
        self.open_pitch(string) as i32 + fret as i32
    }

    /// Parses `"64,59,55,50,45,40"`.
    pub fn parse(spec: &str, max_fret: u8) -> Result<Self, DomainError> {
        let mut pitches = Vec::new();
        for part in spec.split(',') {
            let value: u32 = part
                .trim()
                .parse()
                .map_err(|_| DomainError::InvalidNote(format!("bad tuning entry {part:?}")))?;
            if value > 127 {
                return Err(DomainError::PitchOutOfRange(value));
            }
            pitches.push(value as u8);
        }
        Self::new(&pitches, max_fret)
    }
}

/// Fret at which `pitch` sounds on `string`. May be negative or beyond the
/// tuning's `max_fret`; callers decide playability.
pub fn fret_for(pitch: u8, string: u8, tuning: &Tuning) -> i32 {
    pitch as i32 - tuning.open_pitch(string) as i32
}

/// Whether a fret lies within `[0, max_fret]`.
pub fn is_playable_fret(fret: i32, tuning: &Tuning) -> bool {
    (0..=tuning.max_fret as i32).contains(&fret)
}

/// All strings on which `pitch` is playable, ascending string index.
pub fn feasible_strings(pitch: u8, tuning: &Tuning) -> Vec<u8> {
    (1..=STRING_COUNT as u8)
        .filter(|&s| is_playable_fret(fret_for(pitch, s, tuning), tuning))
        .collect()
}

/// A time-positioned pitched event. Times are MIDI ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    pub onset: u64,
    pub duration: u64,
    pub pitch: u8,
    pub velocity: u8,
}

impl Note {
    pub fn new(onset: u64, duration: u64, pitch: u8, velocity: u8) -> Result<Self, DomainError> {
        if duration == 0 {
            return Err(DomainError::InvalidNote("duration must be positive".into()));
        }
        if onset.checked_add(duration).is_none() {
            return Err(DomainError::InvalidNote(format!(
                "onset {onset} + duration {duration} overflows"
            )));
        }
        if pitch > 127 {
            return Err(DomainError::InvalidNote(format!("pitch {pitch} > 127")));
        }
        if !(1..=127).contains(&velocity) {
            return Err(DomainError::InvalidNote(format!(
                "velocity {velocity} not in 1..=127"
            )));
        }
        Ok(Self {
            onset,
            duration,
            pitch,
            velocity,
        })
    }

    pub fn end(&self) -> u64 {
        self.onset + self.duration
    }

    /// Closed-open interval overlap of `[onset, end)`.
    pub fn overlaps(&self, other: &Note) -> bool {
        self.onset < other.end() && other.onset < self.end()
    }
}

/// A note placed on a string. The fret is derived from the tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TabNote {
    pub note: Note,
    pub string: u8,
    pub fret: i32,
}

impl TabNote {
    pub fn new(note: Note, string: u8, tuning: &Tuning) -> Result<Self, DomainError> {
        if !(1..=STRING_COUNT as u8).contains(&string) {
            return Err(DomainError::InvalidString(string));
        }
        Ok(Self {
            note,
            string,
            fret: fret_for(note.pitch, string, tuning),
        })
    }

    pub fn is_playable(&self, tuning: &Tuning) -> bool {
        is_playable_fret(self.fret, tuning)
    }

    pub fn is_open(&self) -> bool {
        self.fret == 0
    }
}

/// Anything that can be placed in canonical note order.
pub trait CanonicalOrder {
    fn canonical_cmp(&self, other: &Self) -> Ordering;
}

fn note_cmp(a: &Note, b: &Note) -> Ordering {
    a.onset
        .cmp(&b.onset)
        .then_with(|| b.pitch.cmp(&a.pitch))
        .then_with(|| b.duration.cmp(&a.duration))
        .then_with(|| b.velocity.cmp(&a.velocity))
}

impl CanonicalOrder for Note {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        note_cmp(self, other)
    }
}

impl CanonicalOrder for TabNote {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        // identical notes on different strings still need a total order
        note_cmp(&self.note, &other.note).then_with(|| self.string.cmp(&other.string))
    }
}

/// Onset ascending, then pitch, duration and velocity descending. Stable.
pub fn canonical_sort<T: CanonicalOrder>(items: &mut [T]) {
    items.sort_by(|a, b| a.canonical_cmp(b));
}

/// A tablature: notes with string assignments in canonical order.
///
/// `unvalidated` marks raw assignments (e.g. network output) that may contain
/// unplayable frets or same-string overlaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabSequence {
    pub tuning: Tuning,
    pub notes: Vec<TabNote>,
    pub unvalidated: bool,
}

impl TabSequence {
    /// Sorts the notes and derives the `unvalidated` flag from their content.
    pub fn new(tuning: Tuning, mut notes: Vec<TabNote>) -> Self {
        canonical_sort(&mut notes);
        let mut seq = Self {
            tuning,
            notes,
            unvalidated: false,
        };
        seq.unvalidated = !seq.is_valid();
        seq
    }

    pub fn empty(tuning: Tuning) -> Self {
        Self {
            tuning,
            notes: Vec::new(),
            unvalidated: false,
        }
    }

    /// Builds a sequence from notes and a parallel list of strings.
    pub fn from_assignments(
        tuning: Tuning,
        notes: &[Note],
        strings: &[u8],
    ) -> Result<Self, DomainError> {
        assert_eq!(notes.len(), strings.len(), "one string per note");
        let tab = notes
            .iter()
            .zip(strings)
            .map(|(n, &s)| TabNote::new(*n, s, &tuning))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(tuning, tab))
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Notes with the string assignment erased.
    pub fn plain_notes(&self) -> Vec<Note> {
        self.notes.iter().map(|t| t.note).collect()
    }

    pub fn strings(&self) -> Vec<u8> {
        self.notes.iter().map(|t| t.string).collect()
    }

    /// Pairs of note indices sharing a string with overlapping intervals.
    pub fn string_collisions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in 1..=STRING_COUNT as u8 {
            let on_string: Vec<usize> = (0..self.notes.len())
                .filter(|&i| self.notes[i].string == s)
                .collect();
            // sorted by onset, so only scan forward while onsets precede the end
            for (k, &i) in on_string.iter().enumerate() {
                let end = self.notes[i].note.end();
                for &j in &on_string[k + 1..] {
                    if self.notes[j].note.onset >= end {
                        break;
                    }
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// All frets playable and no same-string overlaps.
    pub fn is_valid(&self) -> bool {
        self.notes.iter().all(|n| n.is_playable(&self.tuning)) && self.string_collisions().is_empty()
    }

    /// Recomputes the `unvalidated` flag.
    pub fn revalidate(&mut self) {
        self.unvalidated = !self.is_valid();
    }
}
