//! Comparing tablatures: string agreement, chord stretch, fret-string
//! histograms and their KL divergence.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fretboard::{feasible_strings, Note, TabSequence, Tuning, STRING_COUNT};

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("histograms have different shapes ({0} and {1} frets)")]
    ShapeMismatch(u8, u8),
    #[error("epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub agreements: usize,
    pub matched_pairs: usize,
    pub unmatched_reference: usize,
    pub unmatched_candidate: usize,
}

impl Agreement {
    /// Percentage of matched pairs on the same string; 0 with no pairs.
    pub fn percent(&self) -> f64 {
        if self.matched_pairs == 0 {
            0.0
        } else {
            100.0 * self.agreements as f64 / self.matched_pairs as f64
        }
    }

    pub fn add(&mut self, other: &Agreement) {
        self.agreements += other.agreements;
        self.matched_pairs += other.matched_pairs;
        self.unmatched_reference += other.unmatched_reference;
        self.unmatched_candidate += other.unmatched_candidate;
    }
}

fn strings_by_key(tab: &TabSequence) -> HashMap<(u64, u8), [usize; STRING_COUNT]> {
    let mut out: HashMap<(u64, u8), [usize; STRING_COUNT]> = HashMap::new();
    for n in &tab.notes {
        let slot = out.entry((n.note.onset, n.note.pitch)).or_default();
        if (1..=STRING_COUNT as u8).contains(&n.string) {
            slot[n.string as usize - 1] += 1;
        }
    }
    out
}

/// Notes are matched on exact (onset, pitch). Within a key the pairing that
/// maximizes shared strings is used, which for string labels is the sum of
/// per-string minimum counts.
pub fn agreement(reference: &TabSequence, candidate: &TabSequence) -> Agreement {
    let r = strings_by_key(reference);
    let c = strings_by_key(candidate);
    let mut out = Agreement::default();
    for (key, rs) in &r {
        let a: usize = rs.iter().sum();
        let cs = c.get(key).copied().unwrap_or_default();
        let b: usize = cs.iter().sum();
        let pairs = a.min(b);
        out.matched_pairs += pairs;
        out.unmatched_reference += a - pairs;
        out.unmatched_candidate += b - pairs;
        out.agreements += rs.iter().zip(&cs).map(|(x, y)| x.min(y)).sum::<usize>();
    }
    for (key, cs) in &c {
        if !r.contains_key(key) {
            out.unmatched_candidate += cs.iter().sum::<usize>();
        }
    }
    out
}

/// Stretch of every chord (two or more notes sharing an onset): the largest
/// fret distance between its fretted notes.
pub fn chord_stretches(tab: &TabSequence) -> Vec<i32> {
    let mut groups: BTreeMap<u64, Vec<i32>> = BTreeMap::new();
    for n in &tab.notes {
        groups.entry(n.note.onset).or_default().push(n.fret);
    }
    groups
        .values()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let fretted = g.iter().filter(|&&f| f > 0);
            match (fretted.clone().max(), fretted.min()) {
                (Some(hi), Some(lo)) => hi - lo,
                _ => 0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StretchSummary {
    pub chords: usize,
    pub max: i32,
    pub mean: f64,
    /// Lower middle value for an even count.
    pub median: i32,
    /// Stretch value to chord count.
    pub distribution: BTreeMap<i32, usize>,
}

impl StretchSummary {
    pub fn of(stretches: &[i32]) -> Self {
        if stretches.is_empty() {
            return Self::default();
        }
        let mut sorted = stretches.to_vec();
        sorted.sort_unstable();
        let mut distribution = BTreeMap::new();
        for &s in &sorted {
            *distribution.entry(s).or_insert(0) += 1;
        }
        Self {
            chords: sorted.len(),
            max: *sorted.last().expect("nonempty"),
            mean: sorted.iter().map(|&s| s as f64).sum::<f64>() / sorted.len() as f64,
            median: sorted[(sorted.len() - 1) / 2],
            distribution,
        }
    }
}

/// Note counts per (string, fret).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FretStringHistogram {
    pub max_fret: u8,
    /// `counts[string - 1][fret]`.
    pub counts: Vec<Vec<u64>>,
}

impl FretStringHistogram {
    pub fn new(max_fret: u8) -> Self {
        Self {
            max_fret,
            counts: vec![vec![0; max_fret as usize + 1]; STRING_COUNT],
        }
    }

    pub fn of(tab: &TabSequence) -> Self {
        let mut h = Self::new(tab.tuning.max_fret);
        h.add(tab);
        h
    }

    /// Counts every note with a string in 1..=6 and a fret in range.
    pub fn add(&mut self, tab: &TabSequence) {
        for n in &tab.notes {
            if (1..=STRING_COUNT as u8).contains(&n.string) && (0..=self.max_fret as i32).contains(&n.fret) {
                self.counts[n.string as usize - 1][n.fret as usize] += 1;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn cells(&self) -> Vec<f64> {
        self.counts.iter().flatten().map(|&c| c as f64).collect()
    }

    /// One row per string, one column per fret.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("string");
        for f in 0..=self.max_fret {
            out.push_str(&format!(",{f}"));
        }
        out.push('\n');
        for (s, row) in self.counts.iter().enumerate() {
            out.push_str(&(s + 1).to_string());
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// KL(P ‖ Q) over two count vectors. Epsilon is added to every count before
/// normalizing.
pub fn kl_from_counts(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64, MetricError> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(MetricError::InvalidEpsilon(epsilon));
    }
    let p_total: f64 = p.iter().sum();
    let q_total: f64 = q.iter().sum();
    if p_total <= 0.0 || q_total <= 0.0 {
        return Err(MetricError::EmptyHistogram);
    }
    let p_norm = p_total + epsilon * p.len() as f64;
    let q_norm = q_total + epsilon * q.len() as f64;
    let kl: f64 = p
        .iter()
        .zip(q)
        .map(|(&pc, &qc)| {
            let pi = (pc + epsilon) / p_norm;
            let qi = (qc + epsilon) / q_norm;
            if pi > 0.0 {
                pi * (pi / qi).ln()
            } else {
                0.0
            }
        })
        .sum();
    Ok(kl.max(0.0))
}

/// KL(reference ‖ other) over the smoothed fret-string distributions.
pub fn kl_divergence(
    reference: &FretStringHistogram,
    other: &FretStringHistogram,
    epsilon: f64,
) -> Result<f64, MetricError> {
    if reference.max_fret != other.max_fret {
        return Err(MetricError::ShapeMismatch(reference.max_fret, other.max_fret));
    }
    kl_from_counts(&reference.cells(), &other.cells(), epsilon)
}

/// Each note on a uniformly random playable string; the reference point a
/// system should beat. Unplayable notes go to string 1.
pub fn uniform_assignment(notes: &[Note], tuning: &Tuning, seed: u64) -> TabSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sorted = notes.to_vec();
    crate::fretboard::canonical_sort(&mut sorted);
    let strings: Vec<u8> = sorted
        .iter()
        .map(|n| {
            let options = feasible_strings(n.pitch, tuning);
            if options.is_empty() {
                1
            } else {
                options[rng.random_range(0..options.len())]
            }
        })
        .collect();
    TabSequence::from_assignments(*tuning, &sorted, &strings).expect("strings come from 1..=6")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pieces: usize,
    pub reference_notes: usize,
    pub candidate_notes: usize,
    pub agreement: Agreement,
    pub agreement_pct: f64,
    /// Chord stretch of the candidate tablature.
    pub stretch: StretchSummary,
    /// Chord stretch of the reference, for side-by-side reading.
    pub reference_stretch: StretchSummary,
    /// KL(reference ‖ candidate); `None` if either histogram is empty.
    pub kl_divergence: Option<f64>,
    /// KL(reference ‖ uniform random assignment of the reference notes).
    pub kl_uniform: Option<f64>,
    pub epsilon: f64,
}

impl MetricsReport {
    /// Metrics over paired pieces. Histograms are pooled before the KL.
    pub fn compute(pairs: &[(TabSequence, TabSequence)], epsilon: f64, seed: u64) -> Result<Self, MetricError> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(MetricError::InvalidEpsilon(epsilon));
        }
        let max_fret = pairs.first().map_or(crate::fretboard::DEFAULT_MAX_FRET, |p| p.0.tuning.max_fret);
        let mut agree = Agreement::default();
        let mut stretches = Vec::new();
        let mut reference_stretches = Vec::new();
        let mut reference_hist = FretStringHistogram::new(max_fret);
        let mut candidate_hist = FretStringHistogram::new(max_fret);
        let mut uniform_hist = FretStringHistogram::new(max_fret);
        let (mut reference_notes, mut candidate_notes) = (0, 0);
        for (i, (reference, candidate)) in pairs.iter().enumerate() {
            agree.add(&agreement(reference, candidate));
            stretches.extend(chord_stretches(candidate));
            reference_stretches.extend(chord_stretches(reference));
            reference_hist.add(reference);
            candidate_hist.add(candidate);
            let uniform = uniform_assignment(&reference.plain_notes(), &reference.tuning, seed.wrapping_add(i as u64));
            uniform_hist.add(&uniform);
            reference_notes += reference.len();
            candidate_notes += candidate.len();
        }
        Ok(Self {
            pieces: pairs.len(),
            reference_notes,
            candidate_notes,
            agreement_pct: agree.percent(),
            agreement: agree,
            stretch: StretchSummary::of(&stretches),
            reference_stretch: StretchSummary::of(&reference_stretches),
            kl_divergence: kl_divergence(&reference_hist, &candidate_hist, epsilon).ok(),
            kl_uniform: kl_divergence(&reference_hist, &uniform_hist, epsilon).ok(),
            epsilon,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header plus one row of scalar metrics.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "pieces,reference_notes,candidate_notes,matched_pairs,agreements,agreement_pct,\
             stretch_max,stretch_mean,stretch_median,kl_divergence,kl_uniform\n\
             {},{},{},{},{},{},{},{},{},{},{}\n",
            self.pieces,
            self.reference_notes,
            self.candidate_notes,
            self.agreement.matched_pairs,
            self.agreement.agreements,
            self.agreement_pct,
            self.stretch.max,
            self.stretch.mean,
            self.stretch.median,
            opt(self.kl_divergence),
            opt(self.kl_uniform),
        )
    }
}
