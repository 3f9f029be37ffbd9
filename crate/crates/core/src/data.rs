//! Corpus handling: a seeded synthetic tablature generator, ingestion of
//! six-track MIDI directories into fixed-length token examples, and the
//! on-disk dataset format.
//!
//! A dataset directory holds `vocab.json`, `manifest.json` and one
//! `<split>.tok` file per split:
//!
//! ```text
//! "TABFTOKS" | u32 version | u64 example count
//!   then per example: u32 note count | u32 id count | ids as u32 LE
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{arrange, build_lattice, BaselineError, CostModel};
use crate::fretboard::{Note, TabSequence, Tuning};
use crate::midi::{read_six_track, write_six_track, MidiError};
use crate::model::{EXAMPLE_NOTES, EXAMPLE_TOKENS};
use crate::tokenizer::{velocity_of_bin, Token, TokenSequence, Tokenizer, Vocabulary, VELOCITY_BINS};

const TOKEN_MAGIC: &[u8; 8] = b"TABFTOKS";
pub const TOKEN_FILE_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub pieces: usize,
    pub notes_per_piece: usize,
    pub ticks_per_quarter: u16,
    /// Chance that an event is a two- or three-note chord.
    pub chord_probability: f64,
    /// Largest melodic step between events, in semitones.
    pub max_step: u8,
    pub lowest_pitch: u8,
    pub highest_pitch: u8,
    pub cost: CostModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            pieces: 20,
            notes_per_piece: 120,
            ticks_per_quarter: 480,
            chord_probability: 0.2,
            max_step: 4,
            lowest_pitch: 45,
            highest_pitch: 76,
            cost: CostModel::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.pieces == 0 || self.notes_per_piece == 0 {
            return Err(DataError::Config("piece count and notes per piece must be positive".into()));
        }
        if self.ticks_per_quarter < 2 || self.ticks_per_quarter % 2 != 0 {
            return Err(DataError::Config("ticks per quarter must be even".into()));
        }
        if !(0.0..=1.0).contains(&self.chord_probability) {
            return Err(DataError::Config("chord probability must lie in [0, 1]".into()));
        }
        if self.lowest_pitch + 12 > self.highest_pitch {
            return Err(DataError::Config("pitch range must span at least an octave".into()));
        }
        self.cost.validate()?;
        Ok(())
    }
}

const CHORD_INTERVALS: [&[u8]; 4] = [&[3], &[4], &[7], &[4, 7]];

/// Random-walk melody with occasional chords on an eighth-note grid,
/// arranged by the Viterbi baseline.
pub fn generate_piece(rng: &mut ChaCha8Rng, config: &SynthConfig, tuning: &Tuning) -> Result<TabSequence, DataError> {
    let eighth = config.ticks_per_quarter as u64 / 2;
    let mut notes: Vec<Note> = Vec::with_capacity(config.notes_per_piece);
    let mut pitch = rng.random_range(config.lowest_pitch..=config.highest_pitch - 7);
    let mut onset = 0u64;
    let step = config.max_step as i32;
    while notes.len() < config.notes_per_piece {
        // the walk reflects off the range ends instead of sticking to them
        let (lo, hi) = (config.lowest_pitch as i32, config.highest_pitch as i32 - 7);
        let mut next = pitch as i32 + rng.random_range(-step..=step);
        if next < lo {
            next = 2 * lo - next;
        } else if next > hi {
            next = 2 * hi - next;
        }
        pitch = next.clamp(lo, hi) as u8;
        let duration = eighth * rng.random_range(1..=2u64);
        let velocity = velocity_of_bin(rng.random_range(0..VELOCITY_BINS));
        let mut chord = vec![pitch];
        if rng.random_bool(config.chord_probability) {
            let intervals = CHORD_INTERVALS[rng.random_range(0..CHORD_INTERVALS.len())];
            chord.extend(intervals.iter().map(|i| pitch + i));
        }
        chord.truncate(config.notes_per_piece - notes.len());
        let event: Vec<Note> = chord
            .iter()
            .map(|&p| Note::new(onset, duration, p, velocity))
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::Config(e.to_string()))?;
        // an unplayable chord is dropped and the event re-drawn
        if build_lattice(&event, tuning, &config.cost).is_ok() {
            notes.extend(event);
            onset += duration;
        }
    }
    Ok(arrange(&notes, tuning, &config.cost)?.tab)
}

pub fn generate_synthetic(config: &SynthConfig, tuning: &Tuning) -> Result<Vec<TabSequence>, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.pieces).map(|_| generate_piece(&mut rng, config, tuning)).collect()
}

/// Writes `piece_NNNN.mid` files; returns their paths in order.
pub fn write_corpus(dir: &Path, pieces: &[TabSequence], ticks_per_quarter: u16) -> Result<Vec<PathBuf>, DataError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut paths = Vec::with_capacity(pieces.len());
    for (i, tab) in pieces.iter().enumerate() {
        let path = dir.join(format!("piece_{i:04}.mid"));
        fs::write(&path, write_six_track(tab, ticks_per_quarter)?).map_err(io_error(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> String {
        format!("{self}.tok")
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Fractions of pieces per split; the test split takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Every piece in the training split.
    pub fn all_train(seed: u64) -> Self {
        Self {
            train: 1.0,
            valid: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let ok = self.train >= 0.0 && self.valid >= 0.0 && self.train + self.valid <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(DataError::Config("split fractions must be non-negative and sum to at most 1".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub notes: usize,
    pub examples: usize,
    pub ticks_per_quarter: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub tuning: Tuning,
    pub split: SplitSpec,
    pub vocab_hash: String,
    pub files: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedFile>,
}

impl CorpusManifest {
    pub fn files_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.files.iter().filter(move |f| f.split == split)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: CorpusManifest,
    pub vocabulary: Vocabulary,
    pub train: Vec<TokenSequence>,
    pub valid: Vec<TokenSequence>,
    pub test: Vec<TokenSequence>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[TokenSequence] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<TokenSequence> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }
}

/// Consecutive non-overlapping 50-note chunks, each rebased to onset 0 and
/// padded to 250 tokens.
pub fn chunk_piece(tab: &TabSequence, tokenizer: &Tokenizer) -> Vec<TokenSequence> {
    let pad = tokenizer.vocab().id(Token::Pad);
    tab.notes
        .chunks(EXAMPLE_NOTES)
        .map(|chunk| {
            let base = chunk[0].note.onset;
            let local = TabSequence::new(
                tab.tuning,
                chunk
                    .iter()
                    .map(|t| {
                        let mut t = *t;
                        t.note.onset -= base;
                        t
                    })
                    .collect(),
            );
            let mut seq = tokenizer.tokenize(&local).0;
            seq.ids.resize(EXAMPLE_TOKENS, pad);
            seq
        })
        .collect()
}

/// Sorted `.mid` files directly inside `dir`.
pub fn midi_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_error(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Split for each of `count` pieces: a seeded shuffle, then train, valid and
/// test take consecutive runs.
pub fn assign_splits(count: usize, spec: &SplitSpec) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (spec.train * count as f64).floor() as usize;
    let n_valid = ((spec.valid * count as f64).floor() as usize).min(count - n_train);
    let mut out = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            out[i] = Split::Train;
        } else if rank < n_train + n_valid {
            out[i] = Split::Valid;
        }
    }
    out
}

/// Reads every six-track file in `dir`, skipping (and logging) files that
/// fail to parse.
pub fn ingest(dir: &Path, spec: &SplitSpec, tuning: &Tuning, vocabulary: &Vocabulary) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut pieces = Vec::new();
    let mut skipped = Vec::new();
    for path in midi_files(dir)? {
        let parsed = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| read_six_track(&bytes, tuning).map_err(|e| e.to_string()));
        match parsed {
            Ok(file) => {
                if !file.warnings.is_empty() {
                    log::warn!("{}: {} notes with unplayable frets", path.display(), file.warnings.len());
                }
                pieces.push((path, file));
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                skipped.push(SkippedFile { path, reason });
            }
        }
    }
    if pieces.is_empty() {
        log::warn!("no usable MIDI files in {}", dir.display());
    }

    let splits = assign_splits(pieces.len(), spec);
    let mut dataset = Dataset {
        manifest: CorpusManifest {
            version: MANIFEST_VERSION,
            tuning: *tuning,
            split: *spec,
            vocab_hash: vocabulary.hash(),
            files: Vec::new(),
            skipped,
        },
        vocabulary: vocabulary.clone(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for ((path, file), split) in pieces.into_iter().zip(splits) {
        let tokenizer = Tokenizer::new(vocabulary.clone(), file.ticks_per_quarter)
            .map_err(|e| DataError::Config(e.to_string()))?;
        let examples = chunk_piece(&file.tab, &tokenizer);
        dataset.manifest.files.push(ManifestEntry {
            path,
            split,
            notes: file.tab.len(),
            examples: examples.len(),
            ticks_per_quarter: file.ticks_per_quarter,
        });
        dataset.split_mut(split).extend(examples);
    }
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(k as u64 + 1));
        dataset.split_mut(split).shuffle(&mut rng);
    }
    Ok(dataset)
}

pub fn encode_token_file(examples: &[TokenSequence]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TOKEN_MAGIC);
    out.extend_from_slice(&TOKEN_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(examples.len() as u64).to_le_bytes());
    for e in examples {
        out.extend_from_slice(&(e.note_count as u32).to_le_bytes());
        out.extend_from_slice(&(e.ids.len() as u32).to_le_bytes());
        for id in &e.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    out
}

pub fn decode_token_file(bytes: &[u8]) -> Result<Vec<TokenSequence>, String> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], String> {
        let slice = bytes.get(pos..pos + n).ok_or_else(|| format!("truncated at byte {pos}"))?;
        pos += n;
        Ok(slice)
    };
    if take(8)? != TOKEN_MAGIC {
        return Err("missing token file magic".into());
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != TOKEN_FILE_VERSION {
        return Err(format!("unsupported token file version {version}"));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let mut out = Vec::new();
    for _ in 0..count {
        let note_count = u32_at(take(4)?) as usize;
        let len = u32_at(take(4)?) as usize;
        let ids = take(len.checked_mul(4).ok_or("length overflow")?)?
            .chunks_exact(4)
            .map(u32_at)
            .collect();
        out.push(TokenSequence { ids, note_count });
    }
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    Ok(out)
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_error(&path))
    };
    write("vocab.json", dataset.vocabulary.to_json().as_bytes())?;
    let manifest = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    write("manifest.json", manifest.as_bytes())?;
    for split in Split::ALL {
        write(&split.file_name(), &encode_token_file(dataset.split(split)))?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(io_error(&path)).map(|b| (path, b))
    };
    let format = |path: PathBuf, reason: String| DataError::Format { path, reason };
    let (path, bytes) = read("vocab.json")?;
    let vocabulary = Vocabulary::from_json(&String::from_utf8_lossy(&bytes)).map_err(|e| format(path, e.to_string()))?;
    let (path, bytes) = read("manifest.json")?;
    let manifest: CorpusManifest = serde_json::from_slice(&bytes).map_err(|e| format(path.clone(), e.to_string()))?;
    if manifest.vocab_hash != vocabulary.hash() {
        return Err(format(path, "manifest was built with a different vocabulary".into()));
    }
    let mut dataset = Dataset {
        manifest,
        vocabulary,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let (path, bytes) = read(&split.file_name())?;
        *dataset.split_mut(split) = decode_token_file(&bytes).map_err(|e| format(path, e))?;
    }
    Ok(dataset)
}

/// Loads a directory of six-track files as tablature, sorted by file name.
pub fn read_corpus(dir: &Path, tuning: &Tuning) -> Result<Vec<(PathBuf, TabSequence)>, DataError> {
    midi_files(dir)?
        .into_iter()
        .map(|path| {
            let bytes = fs::read(&path).map_err(io_error(&path))?;
            Ok((path.clone(), read_six_track(&bytes, tuning)?.tab))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::chord_stretches;

    fn small_config(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            pieces: 3,
            notes_per_piece: 60,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generator_is_deterministic_and_playable() {
        let tuning = Tuning::STANDARD;
        let a = generate_synthetic(&small_config(7), &tuning).unwrap();
        let b = generate_synthetic(&small_config(7), &tuning).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(&small_config(8), &tuning).unwrap());
        for tab in &a {
            assert_eq!(tab.len(), 60);
            assert!(tab.is_valid());
            assert!(tab.notes.iter().all(|n| (0..=21).contains(&n.fret)));
            assert!(chord_stretches(tab).iter().all(|&s| s <= 5));
        }
    }

    #[test]
    fn corpus_bytes_are_reproducible() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let pieces = generate_synthetic(&small_config(7), &Tuning::STANDARD).unwrap();
        let a = write_corpus(dir_a.path(), &pieces, 480).unwrap();
        let b = write_corpus(dir_b.path(), &generate_synthetic(&small_config(7), &Tuning::STANDARD).unwrap(), 480)
            .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        assert_eq!(a[2].file_name().unwrap(), "piece_0002.mid");
    }

    #[test]
    fn invalid_configs() {
        let bad = SynthConfig {
            pieces: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&bad, &Tuning::STANDARD), Err(DataError::Config(_))));
        assert!(SplitSpec {
            train: 0.9,
            valid: 0.2,
            seed: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn a_120_note_piece_makes_three_examples() {
        let tab = generate_piece(
            &mut ChaCha8Rng::seed_from_u64(1),
            &SynthConfig {
                notes_per_piece: 120,
                ..SynthConfig::default()
            },
            &Tuning::STANDARD,
        )
        .unwrap();
        let tok = Tokenizer::new(Vocabulary::default(), 480).unwrap();
        let chunks = chunk_piece(&tab, &tok);
        assert_eq!(chunks.iter().map(|c| c.note_count).collect::<Vec<_>>(), vec![50, 50, 20]);
        assert!(chunks.iter().all(|c| c.ids.len() == 250));
        let pad = tok.vocab().pad_id();
        assert!(chunks[2].ids[100..].iter().all(|&id| id == pad));
        assert!(chunks[2].ids[..100].iter().all(|&id| id != pad));
        // every chunk starts at onset zero
        let first = tok.decode_notes(&chunks[1].ids[..250]).unwrap();
        assert_eq!(first[0].onset, 0);
    }

    #[test]
    fn splits_are_disjoint_and_seeded() {
        let spec = SplitSpec {
            seed: 5,
            ..SplitSpec::default()
        };
        let a = assign_splits(20, &spec);
        assert_eq!(a, assign_splits(20, &spec));
        assert_eq!(a.iter().filter(|&&s| s == Split::Train).count(), 16);
        assert_eq!(a.iter().filter(|&&s| s == Split::Valid).count(), 2);
        assert_eq!(a.iter().filter(|&&s| s == Split::Test).count(), 2);
        assert!(assign_splits(0, &spec).is_empty());
    }

    #[test]
    fn ingest_skips_corrupt_files_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pieces = generate_synthetic(&small_config(3), &Tuning::STANDARD).unwrap();
        write_corpus(dir.path(), &pieces, 480).unwrap();
        fs::write(dir.path().join("broken.mid"), b"MThd garbage").unwrap();
        fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let vocab = Vocabulary::default();
        let ds = ingest(dir.path(), &SplitSpec::all_train(1), &Tuning::STANDARD, &vocab).unwrap();
        assert_eq!(ds.manifest.files.len(), 3);
        assert_eq!(ds.manifest.skipped.len(), 1);
        assert!(ds.manifest.skipped[0].path.ends_with("broken.mid"));
        // 60 notes per piece: one full chunk and one of 10
        assert_eq!(ds.train.len(), 6);
        let real: usize = ds.train.iter().map(|e| e.note_count).sum();
        assert_eq!(real, 180);

        let out = tempfile::tempdir().unwrap();
        write_dataset(out.path(), &ds).unwrap();
        assert_eq!(read_dataset(out.path()).unwrap(), ds);
        let again = ingest(dir.path(), &SplitSpec::all_train(1), &Tuning::STANDARD, &vocab).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn empty_directory_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ingest(dir.path(), &SplitSpec::default(), &Tuning::STANDARD, &Vocabulary::default()).unwrap();
        assert!(ds.train.is_empty() && ds.valid.is_empty() && ds.test.is_empty());
        assert!(ds.manifest.files.is_empty());
    }

    #[test]
    fn token_file_rejects_damage() {
        let seq = TokenSequence {
            ids: vec![1, 2, 3],
            note_count: 0,
        };
        let bytes = encode_token_file(&[seq.clone(), seq]);
        assert_eq!(decode_token_file(&bytes).unwrap().len(), 2);
        assert!(decode_token_file(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_token_file(b"NOTATOKENFILE").is_err());
    }

    #[test]
    fn corpus_reads_back_as_written() {
        let dir = tempfile::tempdir().unwrap();
        let pieces = generate_synthetic(&small_config(9), &Tuning::STANDARD).unwrap();
        write_corpus(dir.path(), &pieces, 480).unwrap();
        let read: Vec<TabSequence> = read_corpus(dir.path(), &Tuning::STANDARD)
            .unwrap()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        assert_eq!(read, pieces);
    }

    proptest::proptest! {
        #[test]
        fn chunking_conserves_notes(seed in 0u64..200, notes in 1usize..180) {
            let config = SynthConfig { notes_per_piece: notes, ..SynthConfig::default() };
            let tab = generate_piece(&mut ChaCha8Rng::seed_from_u64(seed), &config, &Tuning::STANDARD).unwrap();
            let tok = Tokenizer::new(Vocabulary::default(), 480).unwrap();
            let chunks = chunk_piece(&tab, &tok);
            proptest::prop_assert_eq!(chunks.iter().map(|c| c.note_count).sum::<usize>(), notes);
            proptest::prop_assert_eq!(chunks.len(), notes.div_ceil(50));
        }
    }
}
