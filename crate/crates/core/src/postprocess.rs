//! Relocates outlier notes to playable strings near the local hand position.
//!
//! A single pass over the notes in canonical order. Each note is compared
//! with the average non-open fret of the run around it (up to `run_radius`
//! notes each side plus itself, using already-relocated values). A note is
//! moved when its fret is above the limit, negative, or too far from that
//! average.

use serde::{Deserialize, Serialize};

use crate::fretboard::{fret_for, Note, TabSequence, DEFAULT_MAX_FRET, STRING_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub max_deviation: f64,
    pub max_fret: u8,
    pub run_radius: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            max_deviation: 5.0,
            max_fret: DEFAULT_MAX_FRET,
            run_radius: 5,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_deviation.is_finite() && self.max_deviation > 0.0) {
            return Err(format!("max_deviation must be positive, got {}", self.max_deviation));
        }
        if self.max_fret == 0 || self.run_radius == 0 {
            return Err("max_fret and run_radius must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    AboveMaxFret,
    NegativeFret,
    Deviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relocation {
    /// Position in canonical order.
    pub index: usize,
    pub note: Note,
    pub from_string: u8,
    pub from_fret: i32,
    pub to_string: u8,
    pub to_fret: i32,
    pub reason: Trigger,
    /// Average non-open fret of the run when the note was examined.
    pub run_average: Option<f64>,
}

/// A triggered note for which no available string was playable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub note: Note,
    pub string: u8,
    pub fret: i32,
    pub reason: Trigger,
    pub run_average: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocessReport {
    pub notes_total: usize,
    pub notes_modified: usize,
    pub relocations: Vec<Relocation>,
    pub failures: Vec<Failure>,
}

impl PostprocessReport {
    pub fn modification_rate(&self) -> f64 {
        if self.notes_total == 0 {
            0.0
        } else {
            self.notes_modified as f64 / self.notes_total as f64
        }
    }
}

/// Mean fret of the non-open notes in `frets`, if any.
pub fn run_average(frets: impl IntoIterator<Item = i32>) -> Option<f64> {
    let (sum, count) = frets
        .into_iter()
        .filter(|&f| f != 0)
        .fold((0i64, 0usize), |(s, c), f| (s + f as i64, c + 1));
    (count > 0).then(|| sum as f64 / count as f64)
}

/// The condition a fret violates, checked in the order listed in [`Trigger`].
pub fn trigger_for(fret: i32, average: Option<f64>, config: &PostprocessConfig) -> Option<Trigger> {
    if fret > config.max_fret as i32 {
        Some(Trigger::AboveMaxFret)
    } else if fret < 0 {
        Some(Trigger::NegativeFret)
    } else if average.is_some_and(|avg| (fret as f64 - avg).abs() > config.max_deviation) {
        Some(Trigger::Deviation)
    } else {
        None
    }
}

pub fn postprocess(tab: &TabSequence, config: &PostprocessConfig) -> (TabSequence, PostprocessReport) {
    let tuning = tab.tuning;
    let mut notes = tab.notes.clone();
    let mut report = PostprocessReport {
        notes_total: notes.len(),
        ..PostprocessReport::default()
    };
    for i in 0..notes.len() {
        let lo = i.saturating_sub(config.run_radius);
        let hi = (i + config.run_radius).min(notes.len() - 1);
        let average = run_average(notes[lo..=hi].iter().map(|n| n.fret));
        let current = notes[i];
        let Some(reason) = trigger_for(current.fret, average, config) else {
            continue;
        };

        let available: Vec<u8> = (1..=STRING_COUNT as u8)
            .filter(|&s| {
                !notes
                    .iter()
                    .enumerate()
                    .any(|(j, other)| j != i && other.string == s && other.note.overlaps(&current.note))
            })
            .collect();
        let pitch = current.note.pitch;
        let open = available.iter().copied().find(|&s| fret_for(pitch, s, &tuning) == 0);
        let choice = open.or_else(|| {
            let target = average.unwrap_or(0.0);
            available
                .iter()
                .map(|&s| (s, fret_for(pitch, s, &tuning)))
                .filter(|&(_, f)| f >= 0 && f <= config.max_fret as i32)
                .min_by(|a, b| {
                    let da = (a.1 as f64 - target).abs();
                    let db = (b.1 as f64 - target).abs();
                    da.total_cmp(&db).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0))
                })
                .map(|(s, _)| s)
        });
        match choice {
            Some(s) if s == current.string => {}
            Some(s) => {
                let fret = fret_for(pitch, s, &tuning);
                notes[i].string = s;
                notes[i].fret = fret;
                report.relocations.push(Relocation {
                    index: i,
                    note: current.note,
                    from_string: current.string,
                    from_fret: current.fret,
                    to_string: s,
                    to_fret: fret,
                    reason,
                    run_average: average,
                });
            }
            None => report.failures.push(Failure {
                index: i,
                note: current.note,
                string: current.string,
                fret: current.fret,
                reason,
                run_average: average,
            }),
        }
    }
    report.notes_modified = report.relocations.len();
    (TabSequence::new(tuning, notes), report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fretboard::{TabNote, Tuning};

    /// Sequential notes (no overlaps) with the given (pitch, string) pairs.
    fn line(cells: &[(u8, u8)]) -> TabSequence {
        let notes: Vec<TabNote> = cells
            .iter()
            .enumerate()
            .map(|(i, &(p, s))| TabNote::new(Note::new(i as u64 * 100, 100, p, 80).unwrap(), s, &Tuning::STANDARD).unwrap())
            .collect();
        TabSequence::new(Tuning::STANDARD, notes)
    }

    #[test]
    fn clean_input_is_untouched() {
        // frets 3,5,2,5,3 on strings 2..4
        let tab = line(&[(62, 2), (64, 2), (57, 3), (60, 3), (53, 4)]);
        let (out, report) = postprocess(&tab, &PostprocessConfig::default());
        assert_eq!(out, tab);
        assert_eq!(report.notes_modified, 0);
        assert!(report.failures.is_empty());
    }

    #[test]
    fn fret_above_limit_with_no_playable_string_is_a_failure() {
        // pitch 86 would need fret 22 on string 1 and more elsewhere
        let mut cells = vec![(69, 1); 5];
        cells.push((86, 1));
        cells.extend(vec![(69, 1); 5]);
        let tab = line(&cells);
        let (out, report) = postprocess(&tab, &PostprocessConfig::default());
        assert_eq!(report.notes_modified, 0);
        assert_eq!(report.failures.len(), 1);
        let f = &report.failures[0];
        assert_eq!((f.index, f.string, f.fret, f.reason), (5, 1, 22, Trigger::AboveMaxFret));
        // average of ten frets of 5 and one of 22
        assert!((f.run_average.unwrap() - 72.0 / 11.0).abs() < 1e-12);
        assert_eq!(out.notes[5].fret, 22);
    }

    #[test]
    fn fret_above_limit_moves_to_the_closest_playable_string() {
        // pitch 74 on string 4 is fret 24; neighbours sit at fret 5
        let mut cells = vec![(69, 1); 5];
        cells.push((74, 4));
        cells.extend(vec![(69, 1); 5]);
        let (out, report) = postprocess(&line(&cells), &PostprocessConfig::default());
        // candidates: string 1 fret 10, string 2 fret 15, string 3 fret 19;
        // average (50 + 24) / 11 ≈ 6.7, so string 1 is closest
        let r = &report.relocations[0];
        assert_eq!((r.from_string, r.from_fret, r.to_string, r.to_fret), (4, 24, 1, 10));
        assert_eq!(r.reason, Trigger::AboveMaxFret);
        assert_eq!(out.notes[5].string, 1);
        assert_eq!(report.notes_modified, 1);
    }

    #[test]
    fn available_open_string_wins() {
        // pitch 64 played at fret 19 on string 5 among low frets
        let mut cells = vec![(52, 4); 3];
        cells.push((64, 5));
        cells.extend(vec![(52, 4); 3]);
        let (out, report) = postprocess(&line(&cells), &PostprocessConfig::default());
        let r = &report.relocations[0];
        assert_eq!((r.to_string, r.to_fret, r.reason), (1, 0, Trigger::Deviation));
        assert!(out.notes[3].is_open());
    }

    #[test]
    fn occupied_strings_are_not_available() {
        // a long note holds string 1 while pitch 64 is misplaced
        let tuning = Tuning::STANDARD;
        let hold = TabNote::new(Note::new(0, 1000, 69, 80).unwrap(), 1, &tuning).unwrap();
        let mut notes = vec![hold];
        for i in 0..4u64 {
            notes.push(TabNote::new(Note::new(i * 100, 100, 52, 80).unwrap(), 4, &tuning).unwrap());
        }
        notes.push(TabNote::new(Note::new(400, 100, 64, 80).unwrap(), 5, &tuning).unwrap());
        let tab = TabSequence::new(tuning, notes);
        let (_, report) = postprocess(&tab, &PostprocessConfig::default());
        let r = report.relocations.iter().find(|r| r.note.pitch == 64).unwrap();
        // open string 1 is busy; string 2 fret 5 is closest to the average
        assert_ne!(r.to_string, 1);
        assert_eq!((r.to_string, r.to_fret), (2, 5));
    }

    #[test]
    fn negative_fret_is_relocated() {
        let tab = line(&[(62, 2), (59, 1), (62, 2)]);
        assert_eq!(tab.notes[1].fret, -5);
        let (out, report) = postprocess(&tab, &PostprocessConfig::default());
        assert_eq!(report.relocations[0].reason, Trigger::NegativeFret);
        assert_eq!((out.notes[1].string, out.notes[1].fret), (2, 0));
        assert!(!out.unvalidated);
    }

    #[test]
    fn all_open_runs_skip_the_deviation_check() {
        assert_eq!(run_average([0, 0, 0]), None);
        let config = PostprocessConfig::default();
        assert_eq!(trigger_for(0, None, &config), None);
        assert_eq!(trigger_for(22, None, &config), Some(Trigger::AboveMaxFret));
        assert_eq!(run_average([0, 4, 6]), Some(5.0));
    }

    #[test]
    fn closest_fret_to_the_average_is_chosen() {
        // pitch 60 at fret 20 on string 6 among frets of 10: average 120 / 11.
        // Candidates: string 2 fret 1, 3 fret 5, 4 fret 10, 5 fret 15.
        let mut cells = vec![(50, 6); 5];
        cells.push((60, 6));
        cells.extend(vec![(50, 6); 5]);
        let (_, report) = postprocess(&line(&cells), &PostprocessConfig::default());
        let r = &report.relocations[0];
        assert_eq!((r.to_string, r.to_fret), (4, 10));
    }

    #[test]
    fn equal_distance_prefers_the_lower_fret() {
        // pitch 62 at fret 22 on string 6 followed by frets 1,1,2,2,2:
        // average (22 + 8) / 6 = 5, equidistant from string 2 fret 3 and
        // string 3 fret 7
        let cells = [(62, 6), (60, 2), (60, 2), (61, 2), (61, 2), (61, 2)];
        let (_, report) = postprocess(&line(&cells), &PostprocessConfig::default());
        let r = &report.relocations[0];
        assert_eq!(r.run_average, Some(5.0));
        assert_eq!((r.to_string, r.to_fret), (2, 3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_tab() -> impl Strategy<Value = TabSequence> {
            proptest::collection::vec((0u64..40, 1u64..6, 40u8..90, 1u8..7), 1..40).prop_map(|v| {
                let notes = v
                    .into_iter()
                    .map(|(on, dur, p, s)| TabNote::new(Note::new(on * 50, dur * 50, p, 80).unwrap(), s, &Tuning::STANDARD).unwrap())
                    .collect();
                TabSequence::new(Tuning::STANDARD, notes)
            })
        }

        proptest! {
            #[test]
            fn guarantees(tab in arb_tab()) {
                let config = PostprocessConfig::default();
                let (out, report) = postprocess(&tab, &config);
                prop_assert_eq!(out.plain_notes(), tab.plain_notes());
                prop_assert_eq!(report.notes_modified, report.relocations.len());
                for r in &report.relocations {
                    prop_assert_eq!(trigger_for(r.from_fret, r.run_average, &config), Some(r.reason));
                    prop_assert!(r.to_fret >= 0 && r.to_fret <= 21);
                }
                for f in &report.failures {
                    prop_assert_eq!(trigger_for(f.fret, f.run_average, &config), Some(f.reason));
                }
                // every unplayable note left behind was reported as a failure
                let failed: Vec<Note> = report.failures.iter().map(|f| f.note).collect();
                for n in &out.notes {
                    if !(0..=21).contains(&n.fret) {
                        prop_assert!(failed.contains(&n.note));
                    }
                }
                prop_assert!(out.string_collisions().len() <= tab.string_collisions().len());
            }
        }
    }
}
