//! `headliner` — train and evaluate noise-robust headline generators.
//!
//! Subcommands mirror the pipeline stages: `vocab`, `confusion`, `corrupt`,
//! `train`, `generate`, `score`, and `experiment`. Every command is
//! deterministic given its `--seed`; primary outputs are byte-identical
//! across reruns. Exit codes: 0 success, 2 validation error, 1 runtime
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use headliner::model::Mode;
use headliner::pipeline::{self, ExperimentArgs, PipelineError, TrainArgs};
use headliner::training::{Regime, TrainConfig};
use headliner::vocab::Unit;

#[derive(Parser)]
#[command(name = "headliner", version, about = "Noise-robust headline generation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build source/target vocabulary files from a JSONL corpus.
    Vocab {
        /// JSONL corpus with `source` and `target` fields.
        #[arg(long)]
        corpus: PathBuf,
        /// Keep tokens occurring at least this often.
        #[arg(long, default_value_t = 5)]
        min_count: usize,
        /// Source tokenization unit.
        #[arg(long, default_value = "char")]
        unit: Unit,
        /// TSV lexicon (required for --unit pronunciation).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Directory receiving source.vocab and target.vocab.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate the substitution channel from reference/hypothesis pairs.
    Confusion {
        /// JSONL with `ref` and `hyp` fields.
        #[arg(long)]
        pairs: PathBuf,
        /// Source vocabulary file.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "char")]
        unit: Unit,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Additive pseudo-count spread over content tokens (0 = off).
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        /// Output TSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a corrupted copy of every source in a corpus.
    Corrupt {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Confusion TSV from `confusion`.
        #[arg(long)]
        confusion: PathBuf,
        #[arg(long, default_value = "char")]
        unit: Unit,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a headline model.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        source_vocab: PathBuf,
        #[arg(long)]
        target_vocab: PathBuf,
        #[arg(long, default_value = "char")]
        unit: Unit,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Confusion TSV (required for --regime naive|proposed).
        #[arg(long)]
        confusion: Option<PathBuf>,
        /// Architecture: rnn, arnn, or arnn_err.
        #[arg(long, default_value = "arnn")]
        mode: Mode,
        /// Data regime: clean, naive, or proposed.
        #[arg(long, default_value = "clean")]
        regime: Regime,
        /// TOML file overriding trainer defaults (flat TrainConfig keys).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed for init, batching, corruption, and dropout.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 2)]
        num_layers: usize,
        #[arg(long, default_value_t = 64)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 32)]
        embed_dim: usize,
        #[arg(long, default_value_t = 30)]
        max_decode_len: usize,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training-log CSV output path.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Decode headlines for a JSONL file of sources.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL with a `source` field per line.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        source_vocab: PathBuf,
        #[arg(long)]
        target_vocab: PathBuf,
        #[arg(long, default_value = "char")]
        unit: Unit,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// 1 = greedy search.
        #[arg(long, default_value_t = 1)]
        beam_width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROUGE-score generated headlines against references.
    Score {
        /// JSONL with a `headline` field per line.
        #[arg(long)]
        hypotheses: PathBuf,
        /// JSONL with a `target` field per line, same order.
        #[arg(long)]
        references: PathBuf,
        /// Optional CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the five-cell robustness grid on the synthetic task.
    Experiment {
        /// Comma-separated master seeds, one full grid per seed.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 2000)]
        train_pairs: usize,
        #[arg(long, default_value_t = 200)]
        test_pairs: usize,
        #[arg(long, default_value_t = 800)]
        confusion_pairs: usize,
        #[arg(long, default_value_t = 50)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0.2)]
        substitution_rate: f64,
        #[arg(long, default_value_t = 2)]
        num_layers: usize,
        #[arg(long, default_value_t = 48)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 24)]
        embed_dim: usize,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Weight of the correctness-estimation loss.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0.05)]
        dropout: f64,
        /// Directory receiving grid.csv, oracle.csv, and per_seed.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Vocab { corpus, min_count, unit, lexicon, out_dir } => {
            let summary = pipeline::cmd_vocab(&corpus, min_count, unit, lexicon.as_deref(), &out_dir)?;
            println!(
                "read {} records; wrote {} source tokens, {} target tokens to {}",
                summary.records,
                summary.source_tokens,
                summary.target_tokens,
                out_dir.display()
            );
        }
        Command::Confusion { pairs, vocab, unit, lexicon, smoothing, out } => {
            let summary =
                pipeline::cmd_confusion(&pairs, &vocab, unit, lexicon.as_deref(), smoothing, &out)?;
            let s = summary.stats;
            println!(
                "aligned {} pairs: {} match, {} substitute, {} insert, {} delete",
                summary.pairs, s.matches, s.substitutions, s.insertions, s.deletions
            );
            println!("token error rate: {:.4} ({:.2}%)", summary.cer, summary.cer * 100.0);
            println!("wrote {}", out.display());
        }
        Command::Corrupt { corpus, vocab, confusion, unit, lexicon, seed, out } => {
            let n = pipeline::cmd_corrupt(&corpus, &vocab, &confusion, unit, lexicon.as_deref(), seed, &out)?;
            println!("corrupted {n} records into {}", out.display());
        }
        Command::Train {
            corpus,
            source_vocab,
            target_vocab,
            unit,
            lexicon,
            confusion,
            mode,
            regime,
            config,
            seed,
            epochs,
            batch_size,
            num_layers,
            hidden_dim,
            embed_dim,
            max_decode_len,
            out,
            log,
        } => {
            let mut train = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    TrainConfig::from_toml_str(&text)?
                }
                None => TrainConfig::default(),
            };
            train.regime = regime;
            if let Some(s) = seed {
                train.master_seed = s;
            }
            if let Some(e) = epochs {
                train.max_epochs = e;
            }
            if let Some(b) = batch_size {
                train.batch_size = b;
            }
            let args = TrainArgs {
                corpus,
                source_vocab,
                target_vocab,
                unit,
                lexicon,
                confusion,
                mode,
                train,
                num_layers,
                hidden_dim,
                embed_dim,
                max_decode_len,
                out_checkpoint: out.clone(),
                out_log: log,
            };
            let summary = pipeline::cmd_train(&args)?;
            let r = summary.report;
            println!(
                "ingested {} pairs ({} dropped for UNK-heavy headlines, {} empty)",
                r.kept, r.dropped_unk, r.dropped_empty
            );
            if let (Some(first), Some(last)) = (summary.log.records.first(), summary.log.records.last()) {
                println!(
                    "validation NLL {:.4} -> {:.4} over {:.2} epochs",
                    first.val_nll, last.val_nll, last.progress
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Generate {
            checkpoint,
            inputs,
            source_vocab,
            target_vocab,
            unit,
            lexicon,
            beam_width,
            out,
        } => {
            let n = pipeline::cmd_generate(
                &checkpoint,
                &inputs,
                &source_vocab,
                &target_vocab,
                unit,
                lexicon.as_deref(),
                beam_width,
                &out,
            )?;
            println!("generated {n} headlines into {}", out.display());
        }
        Command::Score { hypotheses, references, out } => {
            let (_, table) = pipeline::cmd_score(&hypotheses, &references, out.as_deref())?;
            print!("{table}");
        }
        Command::Experiment {
            seeds,
            train_pairs,
            test_pairs,
            confusion_pairs,
            vocab_size,
            substitution_rate,
            num_layers,
            hidden_dim,
            embed_dim,
            epochs,
            batch_size,
            lambda,
            lr,
            dropout,
            out_dir,
        } => {
            let mut args = ExperimentArgs {
                seeds,
                train_pairs,
                test_pairs,
                confusion_pairs,
                num_layers,
                hidden_dim,
                embed_dim,
                max_epochs: epochs,
                batch_size,
                lambda_err: lambda,
                initial_lr: lr,
                dropout,
                ..ExperimentArgs::default()
            };
            args.synth.vocab_size = vocab_size;
            args.synth.substitution_rate = substitution_rate;
            let result = pipeline::run_experiment(&args)?;
            result.write_dir(&out_dir)?;
            print!("{}", result.grid_table());
            println!("wrote grid.csv, oracle.csv, per_seed.csv to {}", out_dir.display());
        }
    }
    Ok(())
}
