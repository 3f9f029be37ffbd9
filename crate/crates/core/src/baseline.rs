//! Viterbi arranger over onset-grouped chords.
//!
//! Every chord (notes sharing an onset) gets all injective string
//! assignments with playable frets and a bounded fretted span. A path picks
//! one assignment per chord; its cost is a per-chord term for stretch and
//! open strings plus a movement term between successive hand positions.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fretboard::{canonical_sort, fret_for, Note, TabSequence, Tuning, STRING_COUNT};

/// Hand positions are stored in sixtieths of a fret so that the mean of up
/// to six integer frets is exact.
const POSITION_SCALE: i64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Cost per fret of hand movement between events.
    pub movement_weight: f64,
    /// Cost per fret of fretted span within a chord.
    pub stretch_weight: f64,
    /// Added once per open-string note; negative values reward open strings.
    pub open_string_bonus: f64,
    /// Largest fretted span a chord may have.
    pub max_chord_span: u8,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            movement_weight: 1.0,
            stretch_weight: 2.0,
            open_string_bonus: -0.5,
            max_chord_span: 5,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let finite = [self.movement_weight, self.stretch_weight, self.open_string_bonus]
            .iter()
            .all(|w| w.is_finite());
        if finite {
            Ok(())
        } else {
            Err(BaselineError::InvalidCostModel("weights must be finite".into()))
        }
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            movement_weight: self.movement_weight * factor,
            stretch_weight: self.stretch_weight * factor,
            open_string_bonus: self.open_string_bonus * factor,
            ..*self
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("chord at tick {onset} has {size} notes; at most 6 can be played")]
    ChordTooLarge { onset: u64, size: usize },
    #[error("chord at tick {onset} has no playable assignment")]
    NoFeasibleAssignment { onset: u64 },
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
}

/// One string assignment for a chord, notes in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub strings: Vec<u8>,
    pub frets: Vec<i32>,
    /// Largest distance between fretted (non-open) notes.
    pub span: i32,
    pub open_count: usize,
    /// Mean fretted position in sixtieths of a fret; `None` when all open.
    pub hand_position: Option<i64>,
}

impl Candidate {
    fn new(strings: Vec<u8>, frets: Vec<i32>) -> Self {
        let fretted: Vec<i32> = frets.iter().copied().filter(|&f| f > 0).collect();
        let span = match (fretted.iter().max(), fretted.iter().min()) {
            (Some(hi), Some(lo)) => hi - lo,
            _ => 0,
        };
        let hand_position = (!fretted.is_empty()).then(|| {
            fretted.iter().map(|&f| f as i64).sum::<i64>() * POSITION_SCALE / fretted.len() as i64
        });
        Self {
            open_count: frets.len() - fretted.len(),
            strings,
            frets,
            span,
            hand_position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub onset: u64,
    pub notes: Vec<Note>,
    /// Ordered by string tuple.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLattice {
    pub tuning: Tuning,
    pub events: Vec<Event>,
}

/// Groups notes into exact-onset chords, canonical order within each.
pub fn group_by_onset(notes: &[Note]) -> Vec<Vec<Note>> {
    let mut sorted = notes.to_vec();
    canonical_sort(&mut sorted);
    let mut groups: Vec<Vec<Note>> = Vec::new();
    for n in sorted {
        match groups.last_mut() {
            Some(g) if g[0].onset == n.onset => g.push(n),
            _ => groups.push(vec![n]),
        }
    }
    groups
}

fn enumerate(
    chord: &[Note],
    tuning: &Tuning,
    max_span: i32,
    strings: &mut Vec<u8>,
    frets: &mut Vec<i32>,
    out: &mut Vec<Candidate>,
) {
    if strings.len() == chord.len() {
        out.push(Candidate::new(strings.clone(), frets.clone()));
        return;
    }
    let pitch = chord[strings.len()].pitch;
    for s in 1..=STRING_COUNT as u8 {
        if strings.contains(&s) {
            continue;
        }
        let f = fret_for(pitch, s, tuning);
        if f < 0 || f > tuning.max_fret as i32 {
            continue;
        }
        if f > 0 {
            let fretted = frets.iter().filter(|&&x| x > 0);
            if fretted.clone().any(|&x| (x - f).abs() > max_span) {
                continue;
            }
        }
        strings.push(s);
        frets.push(f);
        enumerate(chord, tuning, max_span, strings, frets, out);
        strings.pop();
        frets.pop();
    }
}

pub fn build_lattice(notes: &[Note], tuning: &Tuning, cost: &CostModel) -> Result<EventLattice, BaselineError> {
    cost.validate()?;
    let mut events = Vec::new();
    for chord in group_by_onset(notes) {
        let onset = chord[0].onset;
        if chord.len() > STRING_COUNT {
            return Err(BaselineError::ChordTooLarge {
                onset,
                size: chord.len(),
            });
        }
        let mut candidates = Vec::new();
        enumerate(
            &chord,
            tuning,
            cost.max_chord_span as i32,
            &mut Vec::new(),
            &mut Vec::new(),
            &mut candidates,
        );
        if candidates.is_empty() {
            return Err(BaselineError::NoFeasibleAssignment { onset });
        }
        events.push(Event {
            onset,
            notes: chord,
            candidates,
        });
    }
    Ok(EventLattice {
        tuning: *tuning,
        events,
    })
}

pub fn node_cost(c: &Candidate, cost: &CostModel) -> f64 {
    cost.stretch_weight * c.span as f64 + cost.open_string_bonus * c.open_count as f64
}

/// Movement from `previous` (the carried hand position) to `next`.
pub fn edge_cost(previous: Option<i64>, next: &Candidate, cost: &CostModel) -> f64 {
    match (previous, next.hand_position) {
        (Some(p), Some(n)) => cost.movement_weight * (n - p).abs() as f64 / POSITION_SCALE as f64,
        _ => 0.0,
    }
}

/// Total cost of choosing `choices[e]` at every event `e`.
pub fn path_cost(lattice: &EventLattice, choices: &[usize], cost: &CostModel) -> f64 {
    let mut total = 0.0;
    let mut position = None;
    for (event, &c) in lattice.events.iter().zip(choices) {
        let cand = &event.candidates[c];
        total += edge_cost(position, cand, cost) + node_cost(cand, cost);
        position = cand.hand_position.or(position);
    }
    total
}

/// Orders costs, treating values within a relative 1e-9 as equal.
pub fn cost_cmp(a: f64, b: f64) -> Ordering {
    let tol = 1e-9 * a.abs().max(b.abs()).max(1.0);
    if (a - b).abs() <= tol {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub tab: TabSequence,
    pub total_cost: f64,
    /// Candidate index per event.
    pub choices: Vec<usize>,
}

struct State {
    candidate: usize,
    position: Option<i64>,
    cost: f64,
    parent: usize,
    /// Lexicographic rank of this state's path among the event's states.
    rank: usize,
}

/// Minimum-cost path; equal costs go to the lexicographically smallest
/// sequence of string tuples.
pub fn solve(lattice: &EventLattice, cost: &CostModel) -> Solution {
    let mut layers: Vec<Vec<State>> = Vec::with_capacity(lattice.events.len());
    for (e, event) in lattice.events.iter().enumerate() {
        let mut states: Vec<State> = Vec::new();
        let mut index: HashMap<(usize, Option<i64>), usize> = HashMap::new();
        let mut offer = |candidate: usize, position: Option<i64>, total: f64, parent: usize, parent_rank: usize| {
            match index.get(&(candidate, position)) {
                None => {
                    index.insert((candidate, position), states.len());
                    states.push(State {
                        candidate,
                        position,
                        cost: total,
                        parent,
                        rank: parent_rank,
                    });
                }
                Some(&i) => {
                    let s = &mut states[i];
                    if cost_cmp(total, s.cost).then(parent_rank.cmp(&s.rank)) == Ordering::Less {
                        s.cost = total;
                        s.parent = parent;
                        s.rank = parent_rank;
                    }
                }
            }
        };
        if e == 0 {
            for (c, cand) in event.candidates.iter().enumerate() {
                offer(c, cand.hand_position, node_cost(cand, cost), usize::MAX, 0);
            }
        } else {
            for (p, prev) in layers[e - 1].iter().enumerate() {
                for (c, cand) in event.candidates.iter().enumerate() {
                    let total = prev.cost + edge_cost(prev.position, cand, cost) + node_cost(cand, cost);
                    offer(c, cand.hand_position.or(prev.position), total, p, prev.rank);
                }
            }
        }
        // `rank` temporarily holds the parent's rank; replace it by this
        // path's rank: parent path first, then this candidate.
        let mut order: Vec<usize> = (0..states.len()).collect();
        order.sort_by_key(|&i| (states[i].rank, states[i].candidate, states[i].position));
        for (r, &i) in order.iter().enumerate() {
            states[i].rank = r;
        }
        layers.push(states);
    }

    let mut choices = vec![0; lattice.events.len()];
    let mut total_cost = 0.0;
    if let Some(last) = layers.last() {
        let mut best = 0;
        for (i, s) in last.iter().enumerate() {
            if cost_cmp(s.cost, last[best].cost).then(s.rank.cmp(&last[best].rank)) == Ordering::Less {
                best = i;
            }
        }
        total_cost = last[best].cost;
        let mut cursor = best;
        for e in (0..layers.len()).rev() {
            let s = &layers[e][cursor];
            choices[e] = s.candidate;
            cursor = s.parent;
        }
    }
    let mut notes = Vec::new();
    let mut strings = Vec::new();
    for (event, &c) in lattice.events.iter().zip(&choices) {
        notes.extend_from_slice(&event.notes);
        strings.extend_from_slice(&event.candidates[c].strings);
    }
    let tab = TabSequence::from_assignments(lattice.tuning, &notes, &strings).expect("strings come from 1..=6");
    Solution {
        tab,
        total_cost,
        choices,
    }
}

/// Builds the lattice and solves it.
pub fn arrange(notes: &[Note], tuning: &Tuning, cost: &CostModel) -> Result<Solution, BaselineError> {
    Ok(solve(&build_lattice(notes, tuning, cost)?, cost))
}
