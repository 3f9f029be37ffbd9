//! One function per subcommand. Results go to files or stdout; the resolved
//! configuration has already been echoed to stderr.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use tabformer::baseline::arrange;
use tabformer::data::{
    generate_synthetic, ingest as ingest_dir, midi_files, read_dataset, write_corpus, write_dataset, Split,
};
use tabformer::evaluation::{FretStringHistogram, MetricsReport, DEFAULT_EPSILON};
use tabformer::inference::predict_piece;
use tabformer::midi::{read_midi, read_six_track, write_six_track_with_meta, TimingMeta};
use tabformer::model::{evaluate, loss_curve_csv, train as train_model, Checkpoint, TrainingExample, Transformer};
use tabformer::postprocess::{postprocess as fix_up, PostprocessReport};
use tabformer::render::render_ascii;
use tabformer::tokenizer::{Tokenizer, Vocabulary};
use tabformer::TabSequence;

use crate::config::RunConfig;
use crate::failure::{Failure, FORMAT, USAGE};

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json serializes"));
}

/// Input and output file pairs: a file maps to `out`, a directory maps each
/// MIDI file to the same name under `out`.
fn file_pairs(input: &Path, out: &Path) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    if input.is_dir() {
        Ok(midi_files(input)?
            .into_iter()
            .map(|p| {
                let target = out.join(p.file_name().expect("listed files have names"));
                (p, target)
            })
            .collect())
    } else if input.exists() {
        Ok(vec![(input.to_path_buf(), out.to_path_buf())])
    } else {
        Err(Failure::io(input, std::io::Error::from(std::io::ErrorKind::NotFound)))
    }
}

/// Where a JSON report goes when no path is given.
fn report_path(out: &Path, many: bool, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None if many => out.join("postprocess_report.json"),
        None => out.with_extension("report.json"),
    }
}

fn name_of(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let pieces = generate_synthetic(&cfg.synth, &tuning)?;
    let paths = write_corpus(out, &pieces, cfg.synth.ticks_per_quarter)?;
    print_json(&json!({
        "pieces": paths.len(),
        "notes": pieces.iter().map(TabSequence::len).sum::<usize>(),
        "out": out,
    }));
    Ok(())
}

pub fn tokenize(cfg: &RunConfig, input: &Path, masked: bool, output: Option<&Path>) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let bytes = read(input)?;
    let doc = read_midi(&bytes).map_err(|e| Failure::from(e).at(input))?;
    let tokenizer = Tokenizer::new(Vocabulary::default(), doc.ticks_per_quarter).map_err(|e| Failure::new(FORMAT, e))?;
    let (seq, clamps) = if masked {
        tokenizer.tokenize_masked(&doc.merged_notes())
    } else {
        let tab = read_six_track(&bytes, &tuning).map_err(|e| Failure::from(e).at(input))?.tab;
        tokenizer.tokenize(&tab)
    };
    let value = json!({
        "vocab_hash": tokenizer.vocab().hash(),
        "ticks_per_quarter": doc.ticks_per_quarter,
        "note_count": seq.note_count,
        "time_shift_overflows": clamps.time_shift_overflows,
        "duration_overflows": clamps.duration_overflows,
        "ids": seq.ids,
    });
    match output {
        Some(path) => write(path, serde_json::to_vec_pretty(&value).expect("json serializes")),
        None => {
            print_json(&value);
            Ok(())
        }
    }
}

pub fn ingest(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let dataset = ingest_dir(input, &cfg.split, &tuning, &Vocabulary::default())?;
    write_dataset(out, &dataset)?;
    print_json(&json!({
        "files": dataset.manifest.files.len(),
        "skipped": dataset.manifest.skipped.len(),
        "examples": {
            "train": dataset.train.len(),
            "valid": dataset.valid.len(),
            "test": dataset.test.len(),
        },
        "out": out,
    }));
    Ok(())
}

pub fn train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    init: Option<&Path>,
    target_accuracy: Option<f64>,
    curve: Option<&Path>,
) -> Result<(), Failure> {
    let dataset = read_dataset(data)?;
    let vocab = &dataset.vocabulary;
    let (model, start_step) = match init {
        Some(path) => {
            let ckpt = Checkpoint::load_for(&read(path)?, vocab).map_err(|e| Failure::from(e).at(path))?;
            (ckpt.model, ckpt.step)
        }
        None => {
            let mut config = cfg.model.clone();
            config.vocab_size = vocab.len();
            config.pad_id = vocab.pad_id();
            (Transformer::new(config, cfg.seed)?, 0)
        }
    };
    let examples: Vec<TrainingExample> = dataset.train.iter().cloned().map(Into::into).collect();
    let valid: Vec<TrainingExample> = dataset.valid.iter().cloned().map(Into::into).collect();
    let outcome = train_model(model, &examples, vocab, &cfg.train, |report, model| {
        if !valid.is_empty() {
            if let Ok(terms) = evaluate(model, &valid, vocab) {
                log::info!("epoch {} valid loss {:.4} accuracy {:.4}", report.epoch + 1, terms.mean(), terms.accuracy());
            }
        }
        match target_accuracy {
            Some(target) => evaluate(model, &examples, vocab).map_or(true, |t| t.accuracy() < target),
            None => true,
        }
    })?;
    let train_terms = evaluate(&outcome.model, &examples, vocab)?;
    let steps = outcome.steps as u64;
    let ckpt = Checkpoint::new(outcome.model, vocab.clone(), start_step + steps);
    write(out, ckpt.to_bytes())?;
    if let Some(path) = curve {
        write(path, loss_curve_csv(&outcome.curve))?;
    }
    print_json(&json!({
        "epochs": outcome.epochs.len(),
        "steps": steps,
        "stopped_early": outcome.stopped_early,
        "final_epoch": outcome.epochs.last(),
        "train_accuracy": train_terms.accuracy(),
        "train_loss": train_terms.mean(),
        "out": out,
    }));
    Ok(())
}

pub fn infer(
    cfg: &RunConfig,
    input: &Path,
    out: &Path,
    split: Option<Split>,
    model_path: &Path,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let vocab = Vocabulary::default();
    let ckpt = Checkpoint::load_for(&read(model_path)?, &vocab).map_err(|e| Failure::from(e).at(model_path))?;
    let (pairs, many) = match split {
        Some(split) => {
            let dataset = read_dataset(input)?;
            let pairs = dataset
                .manifest
                .files_in(split)
                .map(|f| (f.path.clone(), out.join(f.path.file_name().expect("manifest paths name files"))))
                .collect();
            (pairs, true)
        }
        None => (file_pairs(input, out)?, input.is_dir()),
    };
    if many {
        fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    }
    let mut reports: BTreeMap<String, PostprocessReport> = BTreeMap::new();
    for (source, target) in &pairs {
        let doc = read_midi(&read(source)?).map_err(|e| Failure::from(e).at(source))?;
        let tokenizer = Tokenizer::new(vocab.clone(), doc.ticks_per_quarter).map_err(|e| Failure::new(FORMAT, e))?;
        let predicted = predict_piece(&doc.merged_notes(), &ckpt.model, &tokenizer, &tuning, &cfg.inference)
            .map_err(|e| Failure::from(e).at(source))?;
        let (fixed, rep) = fix_up(&predicted, &cfg.postprocess);
        write(target, write_six_track_with_meta(&fixed, doc.ticks_per_quarter, &TimingMeta::from(&doc))?)?;
        reports.insert(name_of(source), rep);
    }
    let report_file = report_path(out, many, report);
    write(&report_file, serde_json::to_vec_pretty(&reports).expect("report serializes"))?;
    print_summary(&reports, &report_file);
    Ok(())
}

fn print_summary(reports: &BTreeMap<String, PostprocessReport>, report_file: &Path) {
    let total: usize = reports.values().map(|r| r.notes_total).sum();
    let modified: usize = reports.values().map(|r| r.notes_modified).sum();
    let failures: usize = reports.values().map(|r| r.failures.len()).sum();
    print_json(&json!({
        "files": reports.len(),
        "notes": total,
        "notes_modified": modified,
        "modification_rate": if total == 0 { 0.0 } else { modified as f64 / total as f64 },
        "failures": failures,
        "report": report_file,
    }));
}

pub fn postprocess(cfg: &RunConfig, input: &Path, out: &Path, report: Option<&Path>) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let pairs = file_pairs(input, out)?;
    let mut reports = BTreeMap::new();
    for (source, target) in &pairs {
        let file = read_six_track(&read(source)?, &tuning).map_err(|e| Failure::from(e).at(source))?;
        let (fixed, rep) = fix_up(&file.tab, &cfg.postprocess);
        write(target, write_six_track_with_meta(&fixed, file.ticks_per_quarter, &file.meta)?)?;
        reports.insert(name_of(source), rep);
    }
    let report_file = report_path(out, input.is_dir(), report);
    write(&report_file, serde_json::to_vec_pretty(&reports).expect("report serializes"))?;
    print_summary(&reports, &report_file);
    Ok(())
}

pub fn baseline(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let pairs = file_pairs(input, out)?;
    let mut costs = BTreeMap::new();
    for (source, target) in &pairs {
        let doc = read_midi(&read(source)?).map_err(|e| Failure::from(e).at(source))?;
        let solution = arrange(&doc.merged_notes(), &tuning, &cfg.cost).map_err(|e| Failure::from(e).at(source))?;
        write(
            target,
            write_six_track_with_meta(&solution.tab, doc.ticks_per_quarter, &TimingMeta::from(&doc))?,
        )?;
        costs.insert(name_of(source), solution.total_cost);
    }
    print_json(&json!({ "files": pairs.len(), "total_cost": costs }));
    Ok(())
}

/// Reference and candidate tabs paired by file name. For directories, every
/// candidate file needs a namesake in the reference directory.
fn eval_pairs(
    reference: &Path,
    candidate: &Path,
    tuning: &tabformer::Tuning,
) -> Result<Vec<(TabSequence, TabSequence)>, Failure> {
    let names: Vec<(PathBuf, PathBuf)> = if candidate.is_dir() {
        if !reference.is_dir() {
            return Err(Failure::msg(USAGE, "--ref must be a directory when --cand is one"));
        }
        midi_files(candidate)?
            .into_iter()
            .map(|c| (reference.join(c.file_name().expect("listed files have names")), c))
            .collect()
    } else {
        vec![(reference.to_path_buf(), candidate.to_path_buf())]
    };
    names
        .iter()
        .map(|(r, c)| {
            let rt = read_six_track(&read(r)?, tuning).map_err(|e| Failure::from(e).at(r))?.tab;
            let ct = read_six_track(&read(c)?, tuning).map_err(|e| Failure::from(e).at(c))?.tab;
            Ok((rt, ct))
        })
        .collect()
}

pub fn eval(
    cfg: &RunConfig,
    reference: &Path,
    candidate: &Path,
    json_out: Option<&Path>,
    csv_out: Option<&Path>,
    histograms: Option<&Path>,
) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let pairs = eval_pairs(reference, candidate, &tuning)?;
    let report = MetricsReport::compute(&pairs, DEFAULT_EPSILON, cfg.seed).map_err(|e| Failure::msg(USAGE, e))?;
    if let Some(path) = json_out {
        write(path, report.to_json())?;
    }
    if let Some(path) = csv_out {
        write(path, report.to_csv())?;
    }
    if let Some(dir) = histograms {
        let mut reference_hist = FretStringHistogram::new(tuning.max_fret);
        let mut candidate_hist = FretStringHistogram::new(tuning.max_fret);
        for (r, c) in &pairs {
            reference_hist.add(r);
            candidate_hist.add(c);
        }
        write(&dir.join("reference.csv"), reference_hist.to_csv())?;
        write(&dir.join("candidate.csv"), candidate_hist.to_csv())?;
    }
    println!("{}", report.to_json());
    Ok(())
}

pub fn render(cfg: &RunConfig, input: &Path, width: usize) -> Result<(), Failure> {
    let tuning = cfg.tuning().map_err(|e| Failure::msg(USAGE, e))?;
    let file = read_six_track(&read(input)?, &tuning).map_err(|e| Failure::from(e).at(input))?;
    print!("{}", render_ascii(&file.tab, width));
    Ok(())
}
