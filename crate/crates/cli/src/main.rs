//! `tabformer`: command-line front end for tablature generation.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{parse_tuning, RunConfig};
use crate::failure::{Failure, USAGE};

#[derive(Debug, Parser, Serialize)]
#[command(name = "tabformer", version, about = "Guitar tablature from MIDI")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct GlobalArgs {
    /// JSON configuration file; only the fields it sets are changed.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// `standard` or six comma-separated open-string pitches, string 1 first.
    #[arg(long, global = true)]
    tuning: Option<String>,
    #[arg(long, global = true)]
    max_fret: Option<u8>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model checkpoint (inference, or the starting point for training).
    #[arg(long, global = true, value_name = "CKPT")]
    model: Option<PathBuf>,
    /// Beam search over string choices (the default).
    #[arg(long, global = true, overrides_with = "no_beam")]
    beam: bool,
    /// Greedy decoding: beam width 1, one candidate per note.
    #[arg(long, global = true)]
    no_beam: bool,
    /// Let the decoder pick strings on which a pitch is unplayable.
    #[arg(long, global = true)]
    no_feasibility_mask: bool,
    /// Largest allowed distance from the run's average fret.
    #[arg(long, global = true)]
    max_deviation: Option<f64>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase", tag = "command")]
enum Command {
    /// Generate a synthetic six-track corpus arranged by the Viterbi baseline.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pieces: Option<usize>,
        #[arg(long)]
        notes_per_piece: Option<usize>,
    },
    /// Print the token ids of a MIDI file as JSON.
    Tokenize {
        #[arg(long)]
        input: PathBuf,
        /// Mask every string token, as the encoder sees it.
        #[arg(long)]
        masked: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Chunk a directory of six-track files into a token dataset.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        valid_fraction: Option<f64>,
    },
    /// Train a model on an ingested dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from the small test-scale model shape.
        #[arg(long)]
        micro: bool,
        #[arg(long, value_enum)]
        phase: Option<PhaseArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Stop once teacher-forced training accuracy reaches this value.
        #[arg(long)]
        target_accuracy: Option<f64>,
        /// Write the per-step loss curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Predict strings for a MIDI file or directory, then post-process.
    Infer {
        /// A MIDI file, a directory of them, or a dataset with `--split`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Read the files of this split from the dataset manifest in `--input`.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Post-processing report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Move unplayable or outlying notes in six-track files.
    Postprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Arrange MIDI with the Viterbi baseline.
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare candidate tablature against a reference.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "cand")]
        candidate: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for reference.csv and candidate.csv fret-string grids.
        #[arg(long)]
        histograms: Option<PathBuf>,
    },
    /// Print a six-track file as ASCII tablature.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 80)]
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PhaseArg {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Valid,
    Test,
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let g = &cli.global;
    let mut cfg = match cli.command {
        Command::Train { micro: true, .. } => {
            RunConfig::with_model(tabformer::model::ModelConfig::micro(tabformer::tokenizer::Vocabulary::default().len()))
        }
        _ => RunConfig::default(),
    };
    if let Command::Train { phase: Some(PhaseArg::Finetune), .. } = cli.command {
        cfg.train = tabformer::model::TrainConfig::finetune();
    }
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::msg(USAGE, format!("{}: {e}", path.display())))?;
        cfg = cfg.merge_json(value).map_err(|e| Failure::msg(USAGE, e))?;
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(t) = &g.tuning {
        cfg.tuning = parse_tuning(t).map_err(|e| Failure::msg(USAGE, e))?;
    }
    if let Some(m) = g.max_fret {
        cfg.max_fret = m;
        cfg.postprocess.max_fret = m;
    }
    if let Some(d) = g.max_deviation {
        cfg.postprocess.max_deviation = d;
    }
    if g.no_beam && !g.beam {
        cfg.inference.beam_width = 1;
        cfg.inference.top_k = 1;
    }
    if g.no_feasibility_mask {
        cfg.inference.feasibility_mask = false;
    }
    match &cli.command {
        Command::Synth { pieces, notes_per_piece, .. } => {
            if let Some(p) = pieces {
                cfg.synth.pieces = *p;
            }
            if let Some(n) = notes_per_piece {
                cfg.synth.notes_per_piece = *n;
            }
        }
        Command::Ingest { train_fraction, valid_fraction, .. } => {
            if let Some(t) = train_fraction {
                cfg.split.train = *t;
            }
            if let Some(v) = valid_fraction {
                cfg.split.valid = *v;
            }
        }
        Command::Train { phase, epochs, learning_rate, batch_size, .. } => {
            if let Some(p) = phase {
                cfg.train.phase = match p {
                    PhaseArg::Pretrain => tabformer::model::Phase::Pretrain,
                    PhaseArg::Finetune => tabformer::model::Phase::Finetune,
                };
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(lr) = learning_rate {
                cfg.train.learning_rate = *lr;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = *b;
            }
        }
        _ => {}
    }
    cfg.validate().map_err(|e| Failure::msg(USAGE, e))?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli)?;
    let echo = serde_json::json!({ "invocation": cli, "config": cfg });
    eprintln!("{}", serde_json::to_string(&echo).expect("config serializes"));
    let model = cli.global.model.as_deref();
    match &cli.command {
        Command::Synth { out, .. } => commands::synth(&cfg, out),
        Command::Tokenize { input, masked, output } => commands::tokenize(&cfg, input, *masked, output.as_deref()),
        Command::Ingest { input, out, .. } => commands::ingest(&cfg, input, out),
        Command::Train { data, out, target_accuracy, curve, .. } => {
            commands::train(&cfg, data, out, model, *target_accuracy, curve.as_deref())
        }
        Command::Infer { input, out, split, report } => {
            let split = split.map(|s| match s {
                SplitArg::Train => tabformer::data::Split::Train,
                SplitArg::Valid => tabformer::data::Split::Valid,
                SplitArg::Test => tabformer::data::Split::Test,
            });
            let model = model.ok_or_else(|| Failure::msg(USAGE, "infer needs --model"))?;
            commands::infer(&cfg, input, out, split, model, report.as_deref())
        }
        Command::Postprocess { input, out, report } => commands::postprocess(&cfg, input, out, report.as_deref()),
        Command::Baseline { input, out } => commands::baseline(&cfg, input, out),
        Command::Eval { reference, candidate, json, csv, histograms } => {
            commands::eval(&cfg, reference, candidate, json.as_deref(), csv.as_deref(), histograms.as_deref())
        }
        Command::Render { input, width } => commands::render(&cfg, input, *width),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TABFORMER_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
