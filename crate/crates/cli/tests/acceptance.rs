//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom; the
//! process exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabformer::baseline::{arrange, CostModel};
use tabformer::data::{chunk_piece, generate_synthetic, SynthConfig};
use tabformer::evaluation::{agreement, chord_stretches, kl_divergence, kl_from_counts, Agreement, FretStringHistogram, DEFAULT_EPSILON};
use tabformer::inference::{plan_windows, predict_piece, InferenceConfig};
use tabformer::midi::{read_six_track, write_six_track};
use tabformer::model::{evaluate, lm_inputs, train, ModelConfig, Params, TrainConfig, TrainingExample, Transformer};
use tabformer::postprocess::{postprocess, PostprocessConfig, Trigger};
use tabformer::tokenizer::{mask_strings, velocity_of_bin, Family, Tokenizer, Vocabulary};
use tabformer::{fret_for, Note, TabNote, TabSequence, Tuning};

/// Open-string pitches of standard tuning, string 1 first, written out by
/// hand rather than read from the library.
const OPEN: [i32; 6] = [64, 59, 55, 50, 45, 40];
const MAX_FRET: i32 = 21;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    let detail = detail.into();
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tokenizer() -> Tokenizer {
    Tokenizer::new(Vocabulary::default(), 480).unwrap()
}

fn c1_fret_formula() -> Outcome {
    let mut cases = 0;
    for s in 1..=6u8 {
        for f in 0..=MAX_FRET {
            let pitch = OPEN[s as usize - 1] + f;
            if fret_for(pitch as u8, s, &Tuning::STANDARD) != f || Tuning::STANDARD.pitch_at(s, f as u8) != pitch {
                return Err(format!("string {s} fret {f}"));
            }
            cases += 1;
        }
    }
    check(cases == 132, format!("{cases} cells round-trip"))
}

fn c2_chord_example() -> Outcome {
    // F3 C4 E4 A4 on strings 4, 3, 2, 1
    let notes: Vec<Note> = [53, 60, 64, 69].iter().map(|&p| Note::new(0, 480, p, 80).unwrap()).collect();
    let tab = TabSequence::from_assignments(Tuning::STANDARD, &notes, &[4, 3, 2, 1]).map_err(|e| e.to_string())?;
    let mut frets: Vec<(u8, i32)> = tab.notes.iter().map(|n| (n.string, n.fret)).collect();
    frets.sort();
    let by_hand: Vec<(u8, i32)> = [(1u8, 69), (2, 64), (3, 60), (4, 53)]
        .iter()
        .map(|&(s, p)| (s, p - OPEN[s as usize - 1]))
        .collect();
    let stretches = chord_stretches(&tab);
    check(
        frets == by_hand && frets == [(1, 5), (2, 5), (3, 5), (4, 3)] && stretches == [2],
        format!("frets {frets:?}, stretch {stretches:?}"),
    )
}

/// Notes laid end to end on each string, frets within the board.
fn random_tab(rng: &mut ChaCha8Rng) -> TabSequence {
    let mut notes = Vec::new();
    for s in 1..=6u8 {
        let mut t = rng.random_range(0..2000u64);
        for _ in 0..rng.random_range(0..12) {
            let duration = rng.random_range(1..1500u64);
            let fret = rng.random_range(0..=MAX_FRET);
            let note = Note::new(t, duration, (OPEN[s as usize - 1] + fret) as u8, rng.random_range(1..=127)).unwrap();
            notes.push(TabNote::new(note, s, &Tuning::STANDARD).unwrap());
            t += duration + rng.random_range(0..3) * rng.random_range(0..500u64);
        }
    }
    TabSequence::new(Tuning::STANDARD, notes)
}

fn c3_midi_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    for i in 0..1000 {
        let tab = random_tab(&mut rng);
        let tpq = [96u16, 480, 960][rng.random_range(0..3)];
        let bytes = write_six_track(&tab, tpq).map_err(|e| format!("case {i}: {e}"))?;
        let back = read_six_track(&bytes, &Tuning::STANDARD).map_err(|e| format!("case {i}: {e}"))?;
        if back.tab != tab || back.ticks_per_quarter != tpq || !back.warnings.is_empty() {
            return Err(format!("case {i} differs"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("1000 files identical in {secs:.1}s"))
}

fn c4_tokenizer() -> Outcome {
    let tok = tokenizer();
    let vocab = tok.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    for i in 0..10_000 {
        // arbitrary timing: masking and structure
        let tab = random_tab(&mut rng);
        let (seq, _) = tok.tokenize(&tab);
        let once = mask_strings(&seq, vocab);
        if mask_strings(&once, vocab) != once {
            return Err(format!("case {i}: masking is not idempotent"));
        }
        for (pos, &id) in seq.ids.iter().enumerate() {
            if (vocab.family(id) == Some(Family::String)) != (pos % 5 == 1) {
                return Err(format!("case {i}: string token family at position {pos}"));
            }
        }

        // bin-aligned timing: eighth-beat steps of 60 ticks, bin-centre velocities
        let mut onset = 0;
        let mut notes = Vec::new();
        let mut strings = Vec::new();
        for _ in 0..rng.random_range(0..30) {
            onset += 60 * rng.random_range(0..=32u64);
            let note = Note::new(onset, 60 * rng.random_range(1..=32u64), rng.random_range(40..90), velocity_of_bin(rng.random_range(0..8))).unwrap();
            notes.push(note);
            strings.push(rng.random_range(1..=6u8));
        }
        let aligned = TabSequence::from_assignments(Tuning::STANDARD, &notes, &strings).map_err(|e| e.to_string())?;
        let back = tok.detokenize(&tok.tokenize(&aligned).0, &Tuning::STANDARD).map_err(|e| e.to_string())?;
        if back != aligned {
            return Err(format!("case {i}: aligned round trip differs"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("10000 sequences in {secs:.1}s"))
}

fn synthetic_examples(pieces: usize, notes: usize, seed: u64) -> (Vec<TabSequence>, Vec<TrainingExample>) {
    let cfg = SynthConfig {
        pieces,
        notes_per_piece: notes,
        seed,
        ..SynthConfig::default()
    };
    let tabs = generate_synthetic(&cfg, &Tuning::STANDARD).unwrap();
    let tok = tokenizer();
    let examples = tabs.iter().flat_map(|t| chunk_piece(t, &tok)).map(Into::into).collect();
    (tabs, examples)
}

fn c5_gradient_check() -> Outcome {
    let vocab = Vocabulary::default();
    let config = ModelConfig::micro(vocab.len());
    let model = Transformer::new(config.clone(), 5).unwrap();
    let (_, examples) = synthetic_examples(1, 6, 5);
    let (enc, dec, targets) = lm_inputs(&examples[0], &vocab);
    let ids = vocab.string_ids();
    let mut grads = Params::zeros(&config);
    let terms = model.string_loss(&enc, &dec, &targets, &ids, Some((&mut grads, 1.0)), None).unwrap();
    let count = terms.count as f64;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let h = 1e-5;
    let (mut checked, mut worst) = (0, 0.0f64);
    let start = Instant::now();
    // only parameters the loss depends on count towards the quota
    while checked < 100 {
        let ti = rng.random_range(0..analytic.len());
        let idx = rng.random_range(0..analytic[ti].len());
        let a = analytic[ti][idx] / count;
        if a.abs() < 1e-6 {
            continue;
        }
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params.tensors_mut()[ti].1[idx] += delta;
            m.string_loss(&enc, &dec, &targets, &ids, None, None).unwrap().loss_sum / count
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-3 && secs < 300.0, format!("{checked} parameters, worst relative error {worst:.2e}, {secs:.1}s"))
}

fn c6_loss_masking() -> Outcome {
    let vocab = Vocabulary::default();
    let config = ModelConfig::micro(vocab.len());
    let model = Transformer::new(config.clone(), 6).unwrap();
    let (_, examples) = synthetic_examples(1, 20, 6);
    let (enc, dec, targets) = lm_inputs(&examples[0], &vocab);
    let ids = vocab.string_ids();
    let run = |t: &[u32]| {
        let mut g = Params::zeros(&config);
        let terms = model.string_loss(&enc, &dec, t, &ids, Some((&mut g, 1.0)), None).unwrap();
        let bits: Vec<u64> = g.tensors().iter().flat_map(|v| v.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect();
        (terms.loss_sum.to_bits(), terms.count, bits)
    };
    let base = run(&targets);
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for trial in 0..20 {
        let perturbed: Vec<u32> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| if i % 5 == 1 { t } else { rng.random_range(1..vocab.len() as u32) })
            .collect();
        if run(&perturbed) != base {
            return Err(format!("trial {trial} changed the loss or its gradient"));
        }
    }
    Ok(format!("20 perturbations, loss and gradients bit-identical over {} string positions", base.1))
}

fn c7_toy_overfit() -> Outcome {
    let vocab = Vocabulary::default();
    let tok = tokenizer();
    let (tabs, examples) = synthetic_examples(20, 50, 7);
    let model = Transformer::new(ModelConfig::micro(vocab.len()), 0).unwrap();
    // schedule horizon is longer than the budget so the rate is still high
    // when the last few notes are being fitted; training stops at 99% or
    // at the 200-epoch budget, whichever comes first
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 500,
        batch_size: 4,
        ..TrainConfig::pretrain()
    };
    let start = Instant::now();
    let out = train(model, &examples, &vocab, &cfg, |r, m| {
        evaluate(m, &examples, &vocab).unwrap().accuracy() < 0.99 && r.epoch + 1 < 200
    })
    .map_err(|e| e.to_string())?;
    let epochs = out.epochs.len();
    let accuracy = evaluate(&out.model, &examples, &vocab).map_err(|e| e.to_string())?.accuracy();
    let mut agree = Agreement::default();
    for tab in &tabs {
        let predicted = predict_piece(&tab.plain_notes(), &out.model, &tok, &Tuning::STANDARD, &InferenceConfig::default()).map_err(|e| e.to_string())?;
        agree.add(&agreement(tab, &predicted));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        accuracy >= 0.99 && epochs <= 200 && agree.percent() >= 90.0 && secs <= 900.0,
        format!("teacher-forced {:.2}% after {epochs} epochs, autoregressive {:.2}%, {secs:.0}s", accuracy * 100.0, agree.percent()),
    )
}

fn c8_beam_exactness() -> Outcome {
    let tok = tokenizer();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    for case in 0..60 {
        let config = ModelConfig {
            init_std: rng.random_range(0.1..0.5),
            ..ModelConfig::micro(tok.vocab().len())
        };
        let model = Transformer::new(config, rng.random()).unwrap();
        let notes = common::random_short_piece(&mut rng, 5);
        let beam = predict_piece(&notes, &model, &tok, &Tuning::STANDARD, &InferenceConfig::default()).map_err(|e| e.to_string())?;
        let oracle = common::exhaustive_strings(&model, &tok, &notes, &Tuning::STANDARD, 2);
        if beam.strings() != oracle {
            return Err(format!("case {case}: beam {:?}, exhaustive {oracle:?}", beam.strings()));
        }
        cases += 1;
    }
    Ok(format!("{cases} model/input pairs"))
}

fn c9_window_partition() -> Outcome {
    for n in 0..=500usize {
        let plan = plan_windows(n);
        let mut hits = vec![0u32; n];
        for w in &plan.windows {
            if w.notes.len() > 50 || w.predict.start < w.notes.start || w.predict.end > w.notes.end {
                return Err(format!("{n} notes: bad window {w:?}"));
            }
            for i in w.predict.clone() {
                hits[i] += 1;
            }
        }
        if hits.iter().any(|&h| h != 1) {
            return Err(format!("{n} notes: not a partition"));
        }
    }
    Ok("note counts 0..=500 partitioned exactly once".into())
}

/// Re-applies the report to the input, checking each entry against the
/// run it saw at that moment.
fn replay(tab: &TabSequence, out: &TabSequence, report: &tabformer::postprocess::PostprocessReport) -> Result<(), String> {
    let mut notes = tab.notes.clone();
    let mut entries: Vec<(usize, i32, Trigger, Option<f64>, Option<(u8, i32)>)> = report
        .relocations
        .iter()
        .map(|r| (r.index, r.from_fret, r.reason, r.run_average, Some((r.to_string, r.to_fret))))
        .chain(report.failures.iter().map(|f| (f.index, f.fret, f.reason, f.run_average, None)))
        .collect();
    entries.sort_by_key(|e| e.0);
    for (index, fret, reason, average, to) in entries {
        let lo = index.saturating_sub(5);
        let hi = (index + 5).min(notes.len() - 1);
        let fretted: Vec<f64> = notes[lo..=hi].iter().filter(|n| n.fret != 0).map(|n| n.fret as f64).collect();
        let expected = (!fretted.is_empty()).then(|| fretted.iter().sum::<f64>() / fretted.len() as f64);
        let close = match (expected, average) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-9,
            (None, None) => true,
            _ => false,
        };
        if !close || notes[index].fret != fret {
            return Err(format!("note {index}: run average {average:?}, replay {expected:?}"));
        }
        let genuine = match reason {
            Trigger::AboveMaxFret => fret > MAX_FRET,
            Trigger::NegativeFret => fret < 0,
            Trigger::Deviation => (0..=MAX_FRET).contains(&fret) && expected.is_some_and(|a| (fret as f64 - a).abs() > 5.0),
        };
        if !genuine {
            return Err(format!("note {index}: {reason:?} with fret {fret}, average {expected:?}"));
        }
        if let Some((s, f)) = to {
            notes[index].string = s;
            notes[index].fret = f;
        }
    }
    // relocating can reorder identical notes, so compare in canonical order
    if TabSequence::new(tab.tuning, notes) == *out {
        Ok(())
    } else {
        Err("replayed report does not reproduce the output".into())
    }
}

fn c10_postprocessor() -> Outcome {
    let config = PostprocessConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..500 {
        // monophonic: every string is available to every note
        let mono: Vec<TabNote> = (0..rng.random_range(1..60u64))
            .map(|i| TabNote::new(Note::new(i * 120, 120, rng.random_range(40..=85), 80).unwrap(), rng.random_range(1..=6), &Tuning::STANDARD).unwrap())
            .collect();
        let mono = TabSequence::new(Tuning::STANDARD, mono);
        let (out, report) = postprocess(&mono, &config);
        if out.notes.iter().any(|n| !(0..=MAX_FRET).contains(&n.fret)) {
            return Err(format!("monophonic case {case} left a fret out of range"));
        }
        replay(&mono, &out, &report).map_err(|e| format!("monophonic case {case}: {e}"))?;

        // polyphonic, overlapping, possibly unplayable
        let poly: Vec<TabNote> = (0..rng.random_range(1..60))
            .map(|_| {
                let note = Note::new(50 * rng.random_range(0..40u64), 50 * rng.random_range(1..6u64), rng.random_range(30..100), 80).unwrap();
                TabNote::new(note, rng.random_range(1..=6), &Tuning::STANDARD).unwrap()
            })
            .collect();
        let poly = TabSequence::new(Tuning::STANDARD, poly);
        let (out, report) = postprocess(&poly, &config);
        replay(&poly, &out, &report).map_err(|e| format!("polyphonic case {case}: {e}"))?;
    }

    let corpus = generate_synthetic(
        &SynthConfig {
            pieces: 50,
            notes_per_piece: 200,
            seed: 11,
            ..SynthConfig::default()
        },
        &Tuning::STANDARD,
    )
    .map_err(|e| e.to_string())?;
    let (mut total, mut modified) = (0, 0);
    for tab in &corpus {
        let (_, report) = postprocess(tab, &config);
        total += report.notes_total;
        modified += report.notes_modified;
    }
    let rate = modified as f64 / total as f64;
    check(rate <= 0.01, format!("1000 replays consistent, DP corpus modification rate {:.2}%", rate * 100.0))
}

/// Every injective string assignment of `chord` within the board and span.
fn assignments(chord: &[Note], span: i32) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut stack = vec![Vec::<u8>::new()];
    while let Some(partial) = stack.pop() {
        if partial.len() == chord.len() {
            let frets: Vec<i32> = partial.iter().zip(chord).map(|(&s, n)| n.pitch as i32 - OPEN[s as usize - 1]).collect();
            let fretted: Vec<i32> = frets.iter().copied().filter(|&f| f > 0).collect();
            let in_span = fretted.iter().max().zip(fretted.iter().min()).is_none_or(|(hi, lo)| hi - lo <= span);
            if frets.iter().all(|f| (0..=MAX_FRET).contains(f)) && in_span {
                out.push(partial);
            }
            continue;
        }
        for s in 1..=6u8 {
            if !partial.contains(&s) {
                let mut next = partial.clone();
                next.push(s);
                stack.push(next);
            }
        }
    }
    out.sort();
    out
}

/// Cost of one string assignment per event, following the published
/// weights: stretch per fretted span, a bonus per open string, and hand
/// movement between mean fretted positions (all-open chords keep the hand
/// where it was).
fn oracle_cost(events: &[Vec<Note>], choice: &[&Vec<u8>], cost: &CostModel) -> f64 {
    let mut total = 0.0;
    let mut hand: Option<f64> = None;
    for (chord, strings) in events.iter().zip(choice) {
        let frets: Vec<i32> = strings.iter().zip(chord).map(|(&s, n)| n.pitch as i32 - OPEN[s as usize - 1]).collect();
        let fretted: Vec<f64> = frets.iter().filter(|&&f| f > 0).map(|&f| f as f64).collect();
        let span = fretted.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - fretted.iter().cloned().fold(f64::INFINITY, f64::min);
        total += cost.stretch_weight * if fretted.is_empty() { 0.0 } else { span };
        total += cost.open_string_bonus * (frets.len() - fretted.len()) as f64;
        if !fretted.is_empty() {
            let position = fretted.iter().sum::<f64>() / fretted.len() as f64;
            if let Some(h) = hand {
                total += cost.movement_weight * (position - h).abs();
            }
            hand = Some(position);
        }
    }
    total
}

fn c11_dp_oracle() -> Outcome {
    let cost = CostModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut lattices, mut paths) = (0, 0usize);
    let start = Instant::now();
    while lattices < 120 {
        let mut events: Vec<Vec<Note>> = Vec::new();
        for e in 0..rng.random_range(1..=8u64) {
            let mut pitches: Vec<u8> = Vec::new();
            while pitches.len() < rng.random_range(1..=3) {
                let p = rng.random_range(40..=80);
                if !pitches.contains(&p) {
                    pitches.push(p);
                }
            }
            pitches.sort_by(|a, b| b.cmp(a));
            events.push(pitches.iter().map(|&p| Note::new(e * 240, 240, p, 80).unwrap()).collect());
        }
        let options: Vec<Vec<Vec<u8>>> = events.iter().map(|c| assignments(c, cost.max_chord_span as i32)).collect();
        let size: usize = options.iter().map(Vec::len).product();
        if size == 0 || size > 200_000 {
            continue;
        }

        // lexicographic enumeration; strict improvement keeps the first minimum
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut idx = vec![0usize; options.len()];
        loop {
            let choice: Vec<&Vec<u8>> = idx.iter().zip(&options).map(|(&i, o)| &o[i]).collect();
            let c = oracle_cost(&events, &choice, &cost);
            if best.as_ref().is_none_or(|(b, _)| c < b - 1e-9 * b.abs().max(1.0)) {
                best = Some((c, idx.clone()));
            }
            paths += 1;
            let mut k = idx.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < options[k].len() {
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
        let (best_cost, best_idx) = best.unwrap();
        let notes: Vec<Note> = events.concat();
        let strings: Vec<u8> = best_idx.iter().zip(&options).flat_map(|(&i, o)| o[i].clone()).collect();
        let expected = TabSequence::from_assignments(Tuning::STANDARD, &notes, &strings).unwrap();
        let solution = arrange(&notes, &Tuning::STANDARD, &cost).map_err(|e| e.to_string())?;
        if (solution.total_cost - best_cost).abs() > 1e-9 || solution.tab != expected {
            return Err(format!("lattice {lattices}: cost {} vs {best_cost}", solution.total_cost));
        }
        lattices += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 120.0, format!("{lattices} lattices, {paths} paths enumerated, {secs:.1}s"))
}

fn c12_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let tabs = generate_synthetic(&SynthConfig { pieces: 10, notes_per_piece: 80, seed: 12, ..SynthConfig::default() }, &Tuning::STANDARD).map_err(|e| e.to_string())?;
    for tab in &tabs {
        let h = FretStringHistogram::of(tab);
        if kl_divergence(&h, &h, DEFAULT_EPSILON).map_err(|e| e.to_string())? != 0.0 {
            return Err("KL(h, h) is not zero".into());
        }
    }

    let by_hand = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
    let kl = kl_from_counts(&[3.0, 1.0], &[1.0, 1.0], DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    if (kl - by_hand).abs() > 1e-6 || (by_hand - 0.1308).abs() > 1e-4 {
        return Err(format!("two-cell KL {kl}, by hand {by_hand}"));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (i, tab) in tabs.iter().enumerate() {
        let path = dir.path().join(format!("{i}.mid"));
        std::fs::write(&path, write_six_track(tab, 480).unwrap()).unwrap();
        let a = read_six_track(&std::fs::read(&path).unwrap(), &Tuning::STANDARD).unwrap().tab;
        let b = read_six_track(&std::fs::read(&path).unwrap(), &Tuning::STANDARD).unwrap().tab;
        if agreement(&a, &b).percent() != 100.0 {
            return Err(format!("file {i}: identical files disagree"));
        }

        // a candidate with random strings, then the same notes with each
        // chord's entries shuffled
        let strings: Vec<u8> = tab.notes.iter().map(|_| rng.random_range(1..=6)).collect();
        let cand = TabSequence::from_assignments(Tuning::STANDARD, &tab.plain_notes(), &strings).unwrap();
        let mut groups: BTreeMap<u64, Vec<TabNote>> = BTreeMap::new();
        for n in &cand.notes {
            groups.entry(n.note.onset).or_default().push(*n);
        }
        let shuffled: Vec<TabNote> = groups
            .into_values()
            .flat_map(|mut g| {
                g.shuffle(&mut rng);
                g
            })
            .collect();
        let shuffled = TabSequence::new(Tuning::STANDARD, shuffled);
        if agreement(&a, &cand) != agreement(&a, &shuffled) || agreement(&cand, &a) != agreement(&shuffled, &a) {
            return Err(format!("file {i}: agreement depends on chord order"));
        }
    }
    Ok(format!("KL(h,h)=0 on {} pieces, two-cell KL {kl:.6}, identical files 100%", tabs.len()))
}

fn cli(args: &[&str], dir: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tabformer"))
        .args(args)
        .current_dir(dir)
        .env("TABFORMER_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("`{}` exited with {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn c13_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    // twenty pieces get memorized and the model then lands further from the
    // held-out reference than the uniform assigner; a hundred generalize
    cli(&["synth", "--out", "corpus", "--pieces", "100", "--notes-per-piece", "100", "--seed", "13"], d)?;
    cli(&["ingest", "--input", "corpus", "--out", "data", "--seed", "13"], d)?;
    cli(&["train", "--data", "data", "--out", "model.ckpt", "--micro", "--epochs", "25", "--learning-rate", "3e-3", "--batch-size", "4"], d)?;
    cli(&["infer", "--input", "data", "--split", "test", "--out", "predicted", "--model", "model.ckpt"], d)?;
    cli(&["postprocess", "--input", "predicted", "--out", "final"], d)?;
    let stdout = cli(&["eval", "--ref", "corpus", "--cand", "final", "--json", "report.json"], d)?;
    let report: serde_json::Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let kl = report["kl_divergence"].as_f64().ok_or("no kl_divergence")?;
    let uniform = report["kl_uniform"].as_f64().ok_or("no kl_uniform")?;
    check(
        kl < uniform && report == saved && report["pieces"].as_u64() > Some(0),
        format!("{} test pieces, agreement {:.1}%, KL {kl:.4} < uniform {uniform:.4}", report["pieces"], report["agreement_pct"].as_f64().unwrap_or(f64::NAN)),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("fret formula exhaustion", c1_fret_formula),
        ("chord example", c2_chord_example),
        ("MIDI round trip", c3_midi_round_trip),
        ("tokenizer properties", c4_tokenizer),
        ("gradient check", c5_gradient_check),
        ("loss masking", c6_loss_masking),
        ("toy overfit", c7_toy_overfit),
        ("beam exactness", c8_beam_exactness),
        ("window partition", c9_window_partition),
        ("post-processor guarantee", c10_postprocessor),
        ("DP oracle", c11_dp_oracle),
        ("metric oracles", c12_metric_oracles),
        ("end-to-end smoke", c13_end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
