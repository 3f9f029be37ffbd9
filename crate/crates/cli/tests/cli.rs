use std::path::Path;
use std::process::{Command, Output};

use tabformer::midi::{read_six_track, write_midi, write_six_track, MidiDocument};
use tabformer::{Note, TabSequence, Tuning};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabformer"))
        .args(args)
        .current_dir(dir)
        .env("TABFORMER_LOG", "error")
        .output()
        .unwrap()
}

fn chord_file(dir: &Path) {
    let notes: Vec<Note> = [53, 60, 64, 69].iter().map(|&p| Note::new(0, 480, p, 80).unwrap()).collect();
    let tab = TabSequence::from_assignments(Tuning::STANDARD, &notes, &[4, 3, 2, 1]).unwrap();
    std::fs::write(dir.join("chord.mid"), write_six_track(&tab, 480).unwrap()).unwrap();
}

#[test]
fn render_prints_the_chord_column() {
    let dir = tempfile::tempdir().unwrap();
    chord_file(dir.path());
    let out = run(&["render", "--input", "chord.mid"], dir.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "e|-5-|\nB|-5-|\nG|-5-|\nD|-3-|\nA|---|\nE|---|\n");
}

#[test]
fn resolved_config_is_echoed_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    chord_file(dir.path());
    let out = run(&["render", "--input", "chord.mid", "--seed", "4"], dir.path());
    let first = String::from_utf8(out.stderr).unwrap().lines().next().unwrap().to_string();
    let echo: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(echo["config"]["seed"], 4);
    assert_eq!(echo["invocation"]["command"]["command"], "render");
}

#[test]
fn eval_of_a_file_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    chord_file(dir.path());
    let out = run(&["eval", "--ref", "chord.mid", "--cand", "chord.mid", "--csv", "m.csv"], dir.path());
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["agreement_pct"], 100.0);
    assert_eq!(report["kl_divergence"], 0.0);
    assert!(dir.path().join("m.csv").exists());
}

#[test]
fn baseline_writes_a_playable_arrangement() {
    let dir = tempfile::tempdir().unwrap();
    let notes = vec![Note::new(0, 240, 40, 90).unwrap(), Note::new(240, 240, 67, 90).unwrap(), Note::new(240, 240, 59, 90).unwrap()];
    let doc = MidiDocument {
        ticks_per_quarter: 480,
        tracks: vec![notes],
        ..MidiDocument::default()
    };
    std::fs::write(dir.path().join("in.mid"), write_midi(&doc).unwrap()).unwrap();
    let out = run(&["baseline", "--input", "in.mid", "--out", "tab.mid"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tab = read_six_track(&std::fs::read(dir.path().join("tab.mid")).unwrap(), &Tuning::STANDARD).unwrap().tab;
    assert_eq!(tab.len(), 3);
    assert!(tab.is_valid());
}

#[test]
fn exit_codes_follow_the_error_family() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("junk.mid"), b"not midi").unwrap();
    chord_file(d);
    let code = |args: &[&str]| run(args, d).status.code();
    assert_eq!(code(&["render", "--input", "missing.mid"]), Some(3));
    assert_eq!(code(&["render", "--input", "junk.mid"]), Some(4));
    assert_eq!(code(&["render", "--input", "chord.mid", "--tuning", "1,2,3"]), Some(2));
    assert_eq!(code(&["infer", "--input", "chord.mid", "--out", "x.mid"]), Some(2));
    assert_eq!(code(&["infer", "--input", "chord.mid", "--out", "x.mid", "--model", "junk.mid"]), Some(4));
    assert_eq!(code(&["no-such-command"]), Some(2));
}

#[test]
fn config_file_overrides_defaults_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    chord_file(d);
    std::fs::write(d.join("c.json"), r#"{"seed": 7, "postprocess": {"max_deviation": 3.0}}"#).unwrap();
    let out = run(&["render", "--input", "chord.mid", "--config", "c.json", "--max-deviation", "4"], d);
    let first = String::from_utf8(out.stderr).unwrap().lines().next().unwrap().to_string();
    let echo: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(echo["config"]["seed"], 7);
    assert_eq!(echo["config"]["postprocess"]["max_deviation"], 4.0);

    std::fs::write(d.join("bad.json"), r#"{"sead": 7}"#).unwrap();
    assert_eq!(run(&["render", "--input", "chord.mid", "--config", "bad.json"], d).status.code(), Some(2));
}
