//! Standard MIDI File reading and six-track tablature writing.
//!
//! Only what the tablature pipeline needs is interpreted: note on/off pairs,
//! tempo and time-signature meta events. Everything else is skipped. Channels
//! are merged per track.

use std::collections::HashMap;

use thiserror::Error;

use crate::fretboard::{
    canonical_sort, fret_for, is_playable_fret, DomainError, Note, TabNote, TabSequence, Tuning,
    STRING_COUNT,
};

const HEADER_MAGIC: &[u8; 4] = b"MThd";
const TRACK_MAGIC: &[u8; 4] = b"MTrk";
const MAX_VLQ: u64 = 0x0FFF_FFFF;

const META_TRACK_NAME: u8 = 0x03;
const META_END_OF_TRACK: u8 = 0x2F;
const META_TEMPO: u8 = 0x51;
const META_TIME_SIGNATURE: u8 = 0x58;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("not a Standard MIDI File: missing MThd header")]
    MissingHeader,
    #[error("malformed header chunk: {0}")]
    BadHeader(String),
    #[error("unsupported SMF format {0} (only 0 and 1 are read)")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division is not supported")]
    SmpteDivision,
    #[error("file truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("malformed event at byte offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("expected at least 6 tracks for a six-string file, found {0}")]
    TooFewTracks(usize),
    #[error("cannot map {0} note-bearing tracks onto 6 strings")]
    AmbiguousTracks(usize),
    #[error("delta time {0} exceeds the variable-length quantity range")]
    DeltaTooLarge(u64),
    #[error("ticks per quarter must be positive")]
    ZeroDivision,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// A parsed MIDI file reduced to notes and timing metadata.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MidiDocument {
    pub ticks_per_quarter: u16,
    /// Notes per track, canonically sorted.
    pub tracks: Vec<Vec<Note>>,
    /// `(tick, microseconds per quarter)`
    pub tempo_events: Vec<(u64, u32)>,
    /// `(tick, [numerator, denominator power, clocks per click, 32nds per quarter])`
    pub time_signatures: Vec<(u64, [u8; 4])>,
    /// Note-on/off pairs that collapsed to zero length and were discarded.
    pub dropped_zero_length: usize,
}

impl MidiDocument {
    /// All notes from every track, canonically sorted.
    pub fn merged_notes(&self) -> Vec<Note> {
        let mut notes: Vec<Note> = self.tracks.iter().flatten().copied().collect();
        canonical_sort(&mut notes);
        notes
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(Vec::len).sum()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::Truncated {
                offset: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Result<u8, MidiError> {
        self.bytes
            .get(self.pos)
            .copied()
            .ok_or(MidiError::Truncated {
                offset: self.bytes.len(),
            })
    }


    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::Malformed {
            offset: start,
            reason: "variable-length quantity longer than 4 bytes".into(),
        })
    }

    fn data_byte(&mut self) -> Result<u8, MidiError> {
        let offset = self.pos;
        let b = self.u8()?;
        if b & 0x80 != 0 {
            return Err(MidiError::Malformed {
                offset,
                reason: format!("expected data byte, found status {b:#04x}"),
            });
        }
        Ok(b)
    }
}

#[derive(Default)]
struct TrackParse {
    notes: Vec<Note>,
    tempo: Vec<(u64, u32)>,
    time_signatures: Vec<(u64, [u8; 4])>,
    dropped: usize,
}

fn close_note(
    parse: &mut TrackParse,
    onset: u64,
    velocity: u8,
    pitch: u8,
    end: u64,
) -> Result<(), MidiError> {
    if end > onset {
        parse
            .notes
            .push(Note::new(onset, end - onset, pitch, velocity)?);
    } else {
        parse.dropped += 1;
    }
    Ok(())
}

fn parse_track(data: &[u8], base: usize) -> Result<TrackParse, MidiError> {
    let mut cur = Cursor::new(data);
    let mut parse = TrackParse::default();
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    // (channel, pitch) -> (onset, velocity)
    let mut active: HashMap<(u8, u8), (u64, u8)> = HashMap::new();
    let offset_err = |e: MidiError| match e {
        MidiError::Truncated { .. } => MidiError::Truncated {
            offset: base + data.len(),
        },
        MidiError::Malformed { offset, reason } => MidiError::Malformed {
            offset: base + offset,
            reason,
        },
        other => other,
    };

    while cur.remaining() > 0 {
        let delta = cur.vlq().map_err(offset_err)?;
        tick += delta as u64;
        let event_offset = cur.pos;
        let first = cur.peek().map_err(offset_err)?;
        let status = if first & 0x80 != 0 {
            cur.pos += 1;
            first
        } else {
            running.ok_or_else(|| MidiError::Malformed {
                offset: base + event_offset,
                reason: "data byte without running status".into(),
            })?
        };

        match status {
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 | 0x90 => {
                        let pitch = cur.data_byte().map_err(offset_err)?;
                        let velocity = cur.data_byte().map_err(offset_err)?;
                        let key = (channel, pitch);
                        if status & 0xF0 == 0x90 && velocity > 0 {
                            // a repeated note-on closes the sounding note at the new onset
                            if let Some((onset, vel)) = active.remove(&key) {
                                close_note(&mut parse, onset, vel, pitch, tick)?;
                            }
                            active.insert(key, (tick, velocity));
                        } else if let Some((onset, vel)) = active.remove(&key) {
                            close_note(&mut parse, onset, vel, pitch, tick)?;
                        }
                    }
                    0xC0 | 0xD0 => {
                        cur.data_byte().map_err(offset_err)?;
                    }
                    _ => {
                        cur.data_byte().map_err(offset_err)?;
                        cur.data_byte().map_err(offset_err)?;
                    }
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = cur.vlq().map_err(offset_err)?;
                cur.take(len as usize).map_err(offset_err)?;
            }
            0xFF => {
                running = None;
                let kind = cur.u8().map_err(offset_err)?;
                let len = cur.vlq().map_err(offset_err)?;
                let payload = cur.take(len as usize).map_err(offset_err)?;
                match kind {
                    META_END_OF_TRACK => break,
                    META_TEMPO if payload.len() == 3 => {
                        let us = u32::from_be_bytes([0, payload[0], payload[1], payload[2]]);
                        parse.tempo.push((tick, us));
                    }
                    META_TIME_SIGNATURE if payload.len() == 4 => {
                        let mut sig = [0u8; 4];
                        sig.copy_from_slice(payload);
                        parse.time_signatures.push((tick, sig));
                    }
                    _ => {}
                }
            }
            other => {
                return Err(MidiError::Malformed {
                    offset: base + event_offset,
                    reason: format!("status {other:#04x} is not valid in a file"),
                })
            }
        }
    }

    // close anything still sounding at the track end, in a stable order
    let mut pending: Vec<_> = active.into_iter().collect();
    pending.sort_unstable();
    for ((_, pitch), (onset, vel)) in pending {
        close_note(&mut parse, onset, vel, pitch, tick)?;
    }
    canonical_sort(&mut parse.notes);
    Ok(parse)
}

/// Parses a type 0 or type 1 Standard MIDI File.
pub fn read_midi(bytes: &[u8]) -> Result<MidiDocument, MidiError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4).map_err(|_| MidiError::MissingHeader)?;
    if magic != HEADER_MAGIC {
        return Err(MidiError::MissingHeader);
    }
    let header_len = cur.u32()? as usize;
    if header_len < 6 {
        return Err(MidiError::BadHeader(format!(
            "header length {header_len} < 6"
        )));
    }
    let header = cur.take(header_len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let track_count = u16::from_be_bytes([header[2], header[3]]) as usize;
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteDivision);
    }
    if division == 0 {
        return Err(MidiError::BadHeader("ticks per quarter is zero".into()));
    }

    let mut doc = MidiDocument {
        ticks_per_quarter: division,
        ..Default::default()
    };
    while doc.tracks.len() < track_count {
        if cur.remaining() == 0 {
            return Err(MidiError::Truncated { offset: bytes.len() });
        }
        let kind = cur.take(4)?;
        let len = cur.u32()? as usize;
        let base = cur.pos;
        let data = cur.take(len)?;
        if kind != TRACK_MAGIC {
            continue;
        }
        let track = parse_track(data, base)?;
        doc.tracks.push(track.notes);
        doc.tempo_events.extend(track.tempo);
        doc.time_signatures.extend(track.time_signatures);
        doc.dropped_zero_length += track.dropped;
    }
    doc.tempo_events.sort_unstable();
    doc.time_signatures.sort_unstable();
    Ok(doc)
}

fn write_vlq(out: &mut Vec<u8>, value: u64) -> Result<(), MidiError> {
    if value > MAX_VLQ {
        return Err(MidiError::DeltaTooLarge(value));
    }
    let mut groups = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        groups[n] = (v & 0x7F) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(groups[i] | cont);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum TrackEvent {
    // variant order is the tie-break at equal ticks: meta, then offs, then ons
    Tempo(u32),
    TimeSignature([u8; 4]),
    NoteOff { pitch: u8 },
    NoteOn { pitch: u8, velocity: u8 },
}

fn encode_track(
    name: Option<&str>,
    mut events: Vec<(u64, TrackEvent)>,
    channel: u8,
) -> Result<Vec<u8>, MidiError> {
    events.sort();
    let mut body = Vec::new();
    if let Some(name) = name {
        body.push(0);
        body.extend([0xFF, META_TRACK_NAME]);
        write_vlq(&mut body, name.len() as u64)?;
        body.extend(name.as_bytes());
    }
    let mut last = 0u64;
    for (tick, event) in events {
        write_vlq(&mut body, tick - last)?;
        last = tick;
        match event {
            TrackEvent::Tempo(us) => {
                body.extend([0xFF, META_TEMPO, 3]);
                body.extend(&us.to_be_bytes()[1..]);
            }
            TrackEvent::TimeSignature(sig) => {
                body.extend([0xFF, META_TIME_SIGNATURE, 4]);
                body.extend(sig);
            }
            TrackEvent::NoteOff { pitch } => body.extend([0x80 | channel, pitch, 64]),
            TrackEvent::NoteOn { pitch, velocity } => body.extend([0x90 | channel, pitch, velocity]),
        }
    }
    body.extend([0, 0xFF, META_END_OF_TRACK, 0]);

    let mut chunk = Vec::with_capacity(body.len() + 8);
    chunk.extend(TRACK_MAGIC);
    chunk.extend((body.len() as u32).to_be_bytes());
    chunk.extend(body);
    Ok(chunk)
}

fn note_events(notes: &[Note]) -> Vec<(u64, TrackEvent)> {
    let mut events = Vec::with_capacity(notes.len() * 2);
    for n in notes {
        events.push((
            n.onset,
            TrackEvent::NoteOn {
                pitch: n.pitch,
                velocity: n.velocity,
            },
        ));
        events.push((n.end(), TrackEvent::NoteOff { pitch: n.pitch }));
    }
    events
}

fn write_tracks(
    tracks: &[Vec<Note>],
    names: &[Option<String>],
    ticks_per_quarter: u16,
    tempo_events: &[(u64, u32)],
    time_signatures: &[(u64, [u8; 4])],
) -> Result<Vec<u8>, MidiError> {
    if ticks_per_quarter == 0 || ticks_per_quarter & 0x8000 != 0 {
        return Err(MidiError::ZeroDivision);
    }
    let mut out = Vec::new();
    out.extend(HEADER_MAGIC);
    out.extend(6u32.to_be_bytes());
    out.extend(1u16.to_be_bytes());
    out.extend((tracks.len() as u16).to_be_bytes());
    out.extend(ticks_per_quarter.to_be_bytes());
    for (i, notes) in tracks.iter().enumerate() {
        let mut events = note_events(notes);
        if i == 0 {
            events.extend(tempo_events.iter().map(|&(t, us)| (t, TrackEvent::Tempo(us))));
            events.extend(
                time_signatures
                    .iter()
                    .map(|&(t, sig)| (t, TrackEvent::TimeSignature(sig))),
            );
        }
        let name = names.get(i).and_then(|n| n.as_deref());
        out.extend(encode_track(name, events, (i % 16) as u8)?);
    }
    Ok(out)
}

/// Writes a document as SMF type 1. Timing metadata goes on the first track.
pub fn write_midi(doc: &MidiDocument) -> Result<Vec<u8>, MidiError> {
    write_tracks(
        &doc.tracks,
        &[],
        doc.ticks_per_quarter,
        &doc.tempo_events,
        &doc.time_signatures,
    )
}

/// Timing metadata carried through a six-track write.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimingMeta {
    pub tempo_events: Vec<(u64, u32)>,
    pub time_signatures: Vec<(u64, [u8; 4])>,
}

impl From<&MidiDocument> for TimingMeta {
    fn from(doc: &MidiDocument) -> Self {
        Self {
            tempo_events: doc.tempo_events.clone(),
            time_signatures: doc.time_signatures.clone(),
        }
    }
}

/// Partitions a tablature into six per-string note lists, string 1 first.
pub fn split_by_string(tab: &TabSequence) -> Vec<Vec<Note>> {
    let mut tracks = vec![Vec::new(); STRING_COUNT];
    for t in &tab.notes {
        tracks[t.string as usize - 1].push(t.note);
    }
    for track in &mut tracks {
        canonical_sort(track);
    }
    tracks
}

/// SMF type 1 with exactly six tracks, track i holding string i's notes.
pub fn write_six_track(tab: &TabSequence, ticks_per_quarter: u16) -> Result<Vec<u8>, MidiError> {
    write_six_track_with_meta(tab, ticks_per_quarter, &TimingMeta::default())
}

pub fn write_six_track_with_meta(
    tab: &TabSequence,
    ticks_per_quarter: u16,
    meta: &TimingMeta,
) -> Result<Vec<u8>, MidiError> {
    let names: Vec<Option<String>> = (1..=STRING_COUNT)
        .map(|s| Some(format!("String {s}")))
        .collect();
    write_tracks(
        &split_by_string(tab),
        &names,
        ticks_per_quarter,
        &meta.tempo_events,
        &meta.time_signatures,
    )
}

/// A note whose track/string assignment gives an unplayable fret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FretWarning {
    pub string: u8,
    pub note: Note,
    pub fret: i32,
}

/// Result of reading a six-track file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SixTrackFile {
    pub tab: TabSequence,
    pub ticks_per_quarter: u16,
    pub meta: TimingMeta,
    pub warnings: Vec<FretWarning>,
}

/// Picks the six string tracks. Surplus noteless tracks are dropped from the
/// front (conductor tracks), then from the back.
fn select_string_tracks(mut tracks: Vec<Vec<Note>>) -> Result<Vec<Vec<Note>>, MidiError> {
    if tracks.len() < STRING_COUNT {
        return Err(MidiError::TooFewTracks(tracks.len()));
    }
    while tracks.len() > STRING_COUNT && tracks[0].is_empty() {
        tracks.remove(0);
    }
    while tracks.len() > STRING_COUNT && tracks.last().is_some_and(Vec::is_empty) {
        tracks.pop();
    }
    if tracks.len() > STRING_COUNT {
        return Err(MidiError::AmbiguousTracks(tracks.len()));
    }
    Ok(tracks)
}

/// Reads a six-track file: track index becomes string index.
///
/// Notes with unplayable frets are kept (the sequence is flagged
/// `unvalidated`) and reported as warnings.
pub fn read_six_track(bytes: &[u8], tuning: &Tuning) -> Result<SixTrackFile, MidiError> {
    let doc = read_midi(bytes)?;
    let meta = TimingMeta::from(&doc);
    let tracks = select_string_tracks(doc.tracks)?;
    let mut notes = Vec::new();
    let mut warnings = Vec::new();
    for (i, track) in tracks.into_iter().enumerate() {
        let string = i as u8 + 1;
        for note in track {
            let fret = fret_for(note.pitch, string, tuning);
            if !is_playable_fret(fret, tuning) {
                log::warn!(
                    "pitch {} at tick {} gives fret {fret} on string {string}",
                    note.pitch,
                    note.onset
                );
                warnings.push(FretWarning { string, note, fret });
            }
            notes.push(TabNote::new(note, string, tuning)?);
        }
    }
    Ok(SixTrackFile {
        tab: TabSequence::new(*tuning, notes),
        ticks_per_quarter: doc.ticks_per_quarter,
        meta,
        warnings,
    })
}
