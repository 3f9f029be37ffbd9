//! Plain-text tablature: one line per string, string 1 on top, one column
//! per distinct onset.

use std::collections::BTreeMap;

use crate::fretboard::{TabSequence, STRING_COUNT};

const PITCH_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// Labels from the open-string pitch classes, string 1 in lower case.
fn string_labels(tab: &TabSequence) -> Vec<String> {
    let names: Vec<String> = tab
        .tuning
        .open_pitches()
        .iter()
        .map(|&p| PITCH_NAMES[p as usize % 12].to_string())
        .collect();
    let width = names.iter().map(String::len).max().unwrap_or(1);
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let n = if i == 0 { n.to_lowercase() } else { n };
            format!("{n:<width$}")
        })
        .collect()
}

/// Renders the tab, wrapping into blocks no wider than `max_width`
/// characters (at least one column per block).
pub fn render_ascii(tab: &TabSequence, max_width: usize) -> String {
    let mut columns: BTreeMap<u64, [Vec<i32>; STRING_COUNT]> = BTreeMap::new();
    for n in &tab.notes {
        if (1..=STRING_COUNT as u8).contains(&n.string) {
            columns.entry(n.note.onset).or_default()[n.string as usize - 1].push(n.fret);
        }
    }
    let cells: Vec<[String; STRING_COUNT]> = columns
        .values()
        .map(|col| {
            col.clone().map(|frets| frets.iter().map(i32::to_string).collect::<Vec<_>>().join("/"))
        })
        .collect();

    let labels = string_labels(tab);
    let prefix = labels[0].len() + 1;
    let mut blocks: Vec<Vec<String>> = Vec::new();
    let mut lines: Vec<String> = labels.iter().map(|l| format!("{l}|")).collect();
    for col in &cells {
        let width = col.iter().map(String::len).max().unwrap_or(0).max(1);
        let piece_len = width + 2;
        if lines[0].len() > prefix && lines[0].len() + piece_len + 1 > max_width {
            blocks.push(std::mem::replace(
                &mut lines,
                labels.iter().map(|l| format!("{l}|")).collect(),
            ));
        }
        for (line, cell) in lines.iter_mut().zip(col) {
            line.push('-');
            line.push_str(cell);
            line.push_str(&"-".repeat(width - cell.len() + 1));
        }
    }
    blocks.push(lines);

    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for line in block {
            out.push_str(line);
            out.push_str("|\n");
        }
    }
    out
}
