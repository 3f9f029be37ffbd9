//! Independent oracles shared by integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tabformer::fretboard::{canonical_sort, feasible_strings, Note, Tuning};
use tabformer::model::Transformer;
use tabformer::tokenizer::{Token, Tokenizer, TOKENS_PER_NOTE};

/// Exhaustive search over the tree where each note branches into its
/// `top_k` most likely playable strings, scored by summed log-probability of
/// the renormalized choices. Uses full (uncached) decoder passes. Ties go to
/// the lexicographically smaller assignment.
pub fn exhaustive_strings(model: &Transformer, tokenizer: &Tokenizer, notes: &[Note], tuning: &Tuning, top_k: usize) -> Vec<u8> {
    let mut notes = notes.to_vec();
    canonical_sort(&mut notes);
    let base = notes[0].onset;
    let local: Vec<Note> = notes.iter().map(|n| Note { onset: n.onset - base, ..*n }).collect();
    let enc = tokenizer.tokenize_masked(&local).0.ids;
    let vocab = tokenizer.vocab();
    let mut best: Option<(f64, Vec<u8>)> = None;
    let mut stack = vec![(Vec::<u8>::new(), 0.0f64)];
    while let Some((assigned, score)) = stack.pop() {
        let k = assigned.len();
        if k == notes.len() {
            let better = match &best {
                None => true,
                Some((s, a)) => score > *s || (score == *s && assigned < *a),
            };
            if better {
                best = Some((score, assigned));
            }
            continue;
        }
        let mut prefix = vec![vocab.bos_id()];
        for (j, &s) in assigned.iter().enumerate() {
            let frame = &enc[j * TOKENS_PER_NOTE..(j + 1) * TOKENS_PER_NOTE];
            prefix.extend_from_slice(&[frame[0], vocab.id(Token::String(s)), frame[2], frame[3], frame[4]]);
        }
        prefix.push(enc[k * TOKENS_PER_NOTE]);
        let probs = model.string_distribution(&enc, &prefix, &vocab.string_ids()).unwrap();
        let allowed = feasible_strings(notes[k].pitch, tuning);
        let total: f64 = allowed.iter().map(|&s| probs[s as usize - 1]).sum();
        let mut options: Vec<(u8, f64)> = allowed.iter().map(|&s| (s, probs[s as usize - 1] / total)).collect();
        options.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(s, p) in options.iter().take(top_k) {
            let mut next = assigned.clone();
            next.push(s);
            stack.push((next, score + p.ln()));
        }
    }
    best.expect("at least one leaf").1
}

/// Up to `max_notes` notes on an eighth grid (480 ticks per quarter), some
/// stacked into chords, pitches with at least two playable strings.
pub fn random_short_piece(rng: &mut ChaCha8Rng, max_notes: usize) -> Vec<Note> {
    let count = rng.random_range(1..=max_notes);
    let mut notes = Vec::with_capacity(count);
    let mut onset = 0u64;
    while notes.len() < count {
        let pitch = rng.random_range(45u8..=76);
        let chord = !notes.is_empty() && rng.random_bool(0.25);
        if !chord && !notes.is_empty() {
            onset += 240 * rng.random_range(1..=2u64);
        }
        if notes.iter().any(|n: &Note| n.onset == onset && n.pitch == pitch) {
            continue;
        }
        notes.push(Note::new(onset, 240, pitch, 80).unwrap());
    }
    notes
}
