//! Command-level drivers behind the CLI: vocabulary building, confusion
//! estimation, corpus corruption, training, generation, scoring, and the
//! five-cell comparison experiment on the synthetic task.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::align::{edit_stats, levenshtein_align, EditStats};
use crate::confusion::{normalize, sample_confused, ConfusionCounts, ConfusionError, ConfusionModel};
use crate::corpus::{
    encode_corpus, corpus_token_streams, read_jsonl, write_jsonl, CorpusError, CorpusRecord,
    CorruptRecord, GenRecord, IngestReport, TranscriptPair,
};
use crate::decode::{beam_decode, greedy_decode, greedy_decode_batch};
use crate::eval::{corpus_score, EvalError, RougeScores};
use crate::model::{Mode, Model, ModelConfig, ModelError};
use crate::seed::stream_seed;
use crate::synth::{SynthConfig, SynthTask};
use crate::training::{train, EncodedPair, Regime, TrainConfig, TrainError, TrainLog};
use crate::vocab::{Lexicon, Unit, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Problems in user-supplied inputs or configuration (CLI exit code 2).
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Confusion(#[from] ConfusionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// 2 for validation problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Train(TrainError::ConfigMismatch(_)) => 2,
            PipelineError::Model(ModelError::VocabMismatch(_)) => 2,
            PipelineError::Confusion(ConfusionError::VocabMismatch { .. }) => 2,
            _ => 1,
        }
    }
}

fn load_lexicon(path: Option<&Path>) -> Result<Option<Lexicon>, PipelineError> {
    Ok(match path {
        Some(p) => Some(Lexicon::read_file(p)?),
        None => None,
    })
}

// ---------------------------------------------------------------------------
// vocab
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSummary {
    pub records: usize,
    pub source_tokens: usize,
    pub target_tokens: usize,
}

/// Builds `source.vocab` and `target.vocab` under `out_dir` from a corpus:
/// sources under `unit`, headlines as characters.
pub fn cmd_vocab(
    corpus: &Path,
    min_count: usize,
    unit: Unit,
    lexicon: Option<&Path>,
    out_dir: &Path,
) -> Result<VocabSummary, PipelineError> {
    if min_count == 0 {
        return Err(PipelineError::Validation("min-count must be positive".into()));
    }
    let records: Vec<CorpusRecord> = read_jsonl(corpus)?;
    let lexicon = load_lexicon(lexicon)?;
    let (sources, targets) = corpus_token_streams(&records, unit, lexicon.as_ref())?;
    let source_vocab = Vocabulary::build(sources, min_count);
    let target_vocab = Vocabulary::build(targets, min_count);
    fs::create_dir_all(out_dir)?;
    source_vocab.write_file(out_dir.join("source.vocab"))?;
    target_vocab.write_file(out_dir.join("target.vocab"))?;
    Ok(VocabSummary {
        records: records.len(),
        source_tokens: source_vocab.len(),
        target_tokens: target_vocab.len(),
    })
}

// ---------------------------------------------------------------------------
// confusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionSummary {
    pub pairs: usize,
    pub stats: EditStats,
    /// Aggregate character (token) error rate over all pairs.
    pub cer: f64,
}

/// Aligns every reference/hypothesis pair, estimates the substitution
/// channel, writes it as TSV, and reports the aggregate error rate.
pub fn cmd_confusion(
    pairs: &Path,
    vocab: &Path,
    unit: Unit,
    lexicon: Option<&Path>,
    smoothing: f64,
    out: &Path,
) -> Result<ConfusionSummary, PipelineError> {
    let records: Vec<TranscriptPair> = read_jsonl(pairs)?;
    if records.is_empty() {
        return Err(PipelineError::Validation("transcript-pair file is empty".into()));
    }
    let vocab = Vocabulary::read_file(vocab)?;
    let lexicon = load_lexicon(lexicon)?;

    let mut counts = ConfusionCounts::new();
    let mut stats = EditStats::default();
    for rec in &records {
        let r = vocab.encode(&unit.tokenize(&rec.reference, lexicon.as_ref())?);
        let h = vocab.encode(&unit.tokenize(&rec.hyp, lexicon.as_ref())?);
        let alignment = levenshtein_align(&r, &h);
        counts.record_alignment(&r, &h, &alignment);
        stats.merge(&edit_stats(&alignment));
    }
    let cer = stats
        .error_rate()
        .map_err(|_| PipelineError::Validation("all references are empty".into()))?;
    let model = normalize(counts, &vocab, smoothing);
    model.write_file(out, &vocab)?;
    Ok(ConfusionSummary { pairs: records.len(), stats, cer })
}

// ---------------------------------------------------------------------------
// corrupt
// ---------------------------------------------------------------------------

/// Draws one corrupted copy of every record's source and writes
/// `{source, corrupted, labels}` JSONL. Record i uses the sub-stream
/// `corrupt/p{i}` of `seed`.
pub fn cmd_corrupt(
    corpus: &Path,
    vocab: &Path,
    confusion: &Path,
    unit: Unit,
    lexicon: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<usize, PipelineError> {
    let records: Vec<CorpusRecord> = read_jsonl(corpus)?;
    let vocab = Vocabulary::read_file(vocab)?;
    let model = ConfusionModel::read_file(confusion, &vocab)?;
    let lexicon = load_lexicon(lexicon)?;

    let mut out_records = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let tokens = unit.tokenize(&rec.source, lexicon.as_ref())?;
        let ids = vocab.encode(&tokens);
        let sample = sample_confused(&ids, &model, stream_seed(seed, &format!("corrupt/p{i}")));
        out_records.push(CorruptRecord {
            source: unit.render(&tokens),
            corrupted: unit.render(&vocab.decode(&sample.corrupted)),
            labels: sample.labels.iter().map(|&b| u8::from(b)).collect(),
        });
    }
    write_jsonl(out, &out_records)?;
    Ok(out_records.len())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub corpus: PathBuf,
    pub source_vocab: PathBuf,
    pub target_vocab: PathBuf,
    pub unit: Unit,
    pub lexicon: Option<PathBuf>,
    /// Required for the naive/proposed regimes.
    pub confusion: Option<PathBuf>,
    pub mode: Mode,
    pub train: TrainConfig,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub max_decode_len: usize,
    pub out_checkpoint: PathBuf,
    pub out_log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub report: IngestReport,
    pub log: TrainLog,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, PipelineError> {
    let records: Vec<CorpusRecord> = read_jsonl(&args.corpus)?;
    let source_vocab = Arc::new(Vocabulary::read_file(&args.source_vocab)?);
    let target_vocab = Arc::new(Vocabulary::read_file(&args.target_vocab)?);
    let lexicon = load_lexicon(args.lexicon.as_deref())?;
    let (pairs, report) = encode_corpus(
        &records,
        args.unit,
        lexicon.as_ref(),
        &source_vocab,
        &target_vocab,
    )?;

    let confusion = match &args.confusion {
        Some(p) => Some(ConfusionModel::read_file(p, &source_vocab)?),
        None => None,
    };

    let mut config = ModelConfig::new(args.mode, source_vocab, target_vocab);
    config.num_layers = args.num_layers;
    config.hidden_dim = args.hidden_dim;
    config.embed_dim = args.embed_dim;
    config.max_decode_len = args.max_decode_len;
    let init_seed = stream_seed(args.train.master_seed, "init");
    let mut model = Model::new(config, init_seed);

    let log = train(&mut model, &pairs, &args.train, confusion.as_ref())?;
    model.save(&args.out_checkpoint)?;
    if let Some(path) = &args.out_log {
        log.write_file(path)?;
    }
    Ok(TrainSummary { report, log })
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct SourceRecord {
    source: String,
}

/// Decodes a headline for every input source and writes
/// `{source, headline, score}` JSONL. Beam width 1 is greedy search.
#[allow(clippy::too_many_arguments)]
pub fn cmd_generate(
    checkpoint: &Path,
    inputs: &Path,
    source_vocab: &Path,
    target_vocab: &Path,
    unit: Unit,
    lexicon: Option<&Path>,
    beam_width: usize,
    out: &Path,
) -> Result<usize, PipelineError> {
    if beam_width == 0 {
        return Err(PipelineError::Validation("beam-width must be positive".into()));
    }
    let source_vocab = Arc::new(Vocabulary::read_file(source_vocab)?);
    let target_vocab = Arc::new(Vocabulary::read_file(target_vocab)?);
    let model = Model::load(checkpoint, source_vocab.clone(), target_vocab.clone())?;
    let lexicon = load_lexicon(lexicon)?;
    let records: Vec<SourceRecord> = read_jsonl(inputs)?;

    let mut out_records = Vec::with_capacity(records.len());
    for rec in &records {
        let tokens = unit.tokenize(&rec.source, lexicon.as_ref())?;
        if tokens.is_empty() {
            return Err(PipelineError::Validation(format!(
                "input source {:?} is empty after preprocessing",
                rec.source
            )));
        }
        let ids = source_vocab.encode(&tokens);
        let hyp = if beam_width == 1 {
            greedy_decode(&model, &ids)?
        } else {
            beam_decode(&model, &ids, beam_width)?
                .into_iter()
                .next()
                .expect("beam search returns at least one hypothesis")
        };
        out_records.push(GenRecord {
            source: rec.source.clone(),
            headline: target_vocab.decode(&hyp.tokens).concat(),
            score: hyp.score,
        });
    }
    write_jsonl(out, &out_records)?;
    Ok(out_records.len())
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct HypothesisRecord {
    headline: String,
}

#[derive(Debug, Deserialize)]
struct ReferenceRecord {
    target: String,
}

/// Character-level ROUGE of hypothesis headlines against references,
/// matched line by line.
pub fn cmd_score(
    hypotheses: &Path,
    references: &Path,
    csv_out: Option<&Path>,
) -> Result<(RougeScores, String), PipelineError> {
    let hyps: Vec<HypothesisRecord> = read_jsonl(hypotheses)?;
    let refs: Vec<ReferenceRecord> = read_jsonl(references)?;
    if hyps.len() != refs.len() {
        return Err(PipelineError::Validation(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(PipelineError::Validation("nothing to score".into()));
    }
    // scores are invariant under any consistent token->id map
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut encode = |text: &str| -> Vec<usize> {
        crate::vocab::tokenize_chars(text)
            .into_iter()
            .map(|t| {
                let next = ids.len();
                *ids.entry(t).or_insert(next)
            })
            .collect()
    };
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = hyps
        .iter()
        .zip(&refs)
        .map(|(h, r)| (encode(&h.headline), encode(&r.target)))
        .collect();
    let scores = corpus_score(pairs.iter().map(|(c, r)| (c.as_slice(), r.as_slice())))?;

    let csv = score_csv(&scores);
    if let Some(path) = csv_out {
        fs::write(path, &csv)?;
    }
    Ok((scores, score_table(&scores)))
}

fn score_csv(s: &RougeScores) -> String {
    let mut out = String::from("metric,recall,precision,f1\n");
    for (name, c) in [("rouge1", s.rouge1), ("rouge2", s.rouge2), ("rougeL", s.rouge_l)] {
        let _ = writeln!(out, "{name},{},{},{}", c.recall, c.precision, c.f1);
    }
    out
}

fn score_table(s: &RougeScores) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>8} {:>10} {:>8}", "metric", "recall", "precision", "f1");
    for (name, c) in [("ROUGE-1", s.rouge1), ("ROUGE-2", s.rouge2), ("ROUGE-L", s.rouge_l)] {
        let _ = writeln!(
            out,
            "{:<8} {:>8.2} {:>10.2} {:>8.2}",
            name,
            c.recall * 100.0,
            c.precision * 100.0,
            c.f1 * 100.0
        );
    }
    out
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

/// Knobs for the synthetic comparison grid.
#[derive(Debug, Clone)]
pub struct ExperimentArgs {
    pub seeds: Vec<u64>,
    pub train_pairs: usize,
    pub test_pairs: usize,
    /// Transcript pairs used to estimate the channel.
    pub confusion_pairs: usize,
    pub synth: SynthConfig,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub dropout: f64,
    pub lambda_err: f64,
    pub samples_per_story: usize,
    /// Validation cadence passed to the trainer. Desk-scale corpora see few
    /// updates per 0.1 epoch, so the default checks once per epoch.
    pub eval_interval: f64,
    /// Number of equal training segments per cell; the learning rate warm
    /// restarts at each segment boundary. 1 disables restarts.
    pub lr_restarts: usize,
    /// Inverse-sigmoid constant for scheduled sampling. Desk-scale epochs
    /// hold few updates, so the default decays slower than k = 1.
    pub ss_k: f64,
}

impl Default for ExperimentArgs {
    fn default() -> ExperimentArgs {
        ExperimentArgs {
            seeds: vec![1, 2, 3, 4, 5],
            train_pairs: 2000,
            test_pairs: 200,
            confusion_pairs: 800,
            synth: SynthConfig::default(),
            num_layers: 2,
            hidden_dim: 48,
            embed_dim: 24,
            max_epochs: 40,
            batch_size: 16,
            initial_lr: 3.0,
            dropout: 0.05,
            lambda_err: 1.0,
            samples_per_story: 1,
            eval_interval: 1.0,
            lr_restarts: 8,
            ss_k: 8.0,
        }
    }
}

/// F1 scores of one cell, in points (0–100).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

impl CellScores {
    fn from_rouge(s: &RougeScores) -> CellScores {
        CellScores {
            rouge1: s.rouge1.f1 * 100.0,
            rouge2: s.rouge2.f1 * 100.0,
            rouge_l: s.rouge_l.f1 * 100.0,
        }
    }

    fn add(&mut self, other: &CellScores) {
        self.rouge1 += other.rouge1;
        self.rouge2 += other.rouge2;
        self.rouge_l += other.rouge_l;
    }

    fn scale(&mut self, f: f64) {
        self.rouge1 *= f;
        self.rouge2 *= f;
        self.rouge_l *= f;
    }
}

/// The five comparison cells, in presentation order.
pub const GRID_CELLS: [(&str, Regime, Mode); 5] = [
    ("clean-rnn", Regime::Clean, Mode::Rnn),
    ("clean-arnn", Regime::Clean, Mode::Arnn),
    ("naive-rnn", Regime::Naive, Mode::Rnn),
    ("naive-arnn", Regime::Naive, Mode::Arnn),
    ("proposed", Regime::Proposed, Mode::ArnnErr),
];

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Cell name → scores on channel-corrupted test input, seed-averaged.
    pub grid: Vec<(String, CellScores)>,
    /// Clean-regime models evaluated on clean test input.
    pub oracle: Vec<(String, CellScores)>,
    /// (seed, cell, scores) for every corrupted-input evaluation.
    pub per_seed: Vec<(u64, String, CellScores)>,
}

impl ExperimentResult {
    pub fn cell(&self, name: &str) -> Option<&CellScores> {
        self.grid.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn oracle_cell(&self, name: &str) -> Option<&CellScores> {
        self.oracle.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn grid_csv(&self) -> String {
        csv_of(&self.grid)
    }

    pub fn oracle_csv(&self) -> String {
        csv_of(&self.oracle)
    }

    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from("seed,cell,rouge1_f1,rouge2_f1,rougeL_f1\n");
        for (seed, cell, s) in &self.per_seed {
            let _ = writeln!(
                out,
                "{seed},{cell},{:.2},{:.2},{:.2}",
                s.rouge1, s.rouge2, s.rouge_l
            );
        }
        out
    }

    pub fn grid_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>8}",
            "cell", "ROUGE-1", "ROUGE-2", "ROUGE-L"
        );
        for (name, s) in &self.grid {
            let _ = writeln!(
                out,
                "{name:<12} {:>8.2} {:>8.2} {:>8.2}",
                s.rouge1, s.rouge2, s.rouge_l
            );
        }
        out
    }

    pub fn write_dir(&self, out_dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("grid.csv"), self.grid_csv())?;
        fs::write(out_dir.join("oracle.csv"), self.oracle_csv())?;
        fs::write(out_dir.join("per_seed.csv"), self.per_seed_csv())?;
        Ok(())
    }
}

fn csv_of(rows: &[(String, CellScores)]) -> String {
    let mut out = String::from("cell,rouge1_f1,rouge2_f1,rougeL_f1\n");
    for (name, s) in rows {
        let _ = writeln!(out, "{name},{:.2},{:.2},{:.2}", s.rouge1, s.rouge2, s.rouge_l);
    }
    out
}

/// Runs the full grid: per seed, a fresh synthetic world (task, corpora,
/// channel estimation), one model per cell, greedy evaluation on a shared
/// corrupted test set, and clean-input oracle rows for the clean cells.
/// Every stream derives from the seed and the cell name, so no corruption
/// stream is shared between cells and reruns are byte-identical.
pub fn run_experiment(args: &ExperimentArgs) -> Result<ExperimentResult, PipelineError> {
    if args.seeds.is_empty() {
        return Err(PipelineError::Validation("at least one seed is required".into()));
    }
    let mut grid_acc: Vec<(String, CellScores)> = GRID_CELLS
        .iter()
        .map(|(n, _, _)| (n.to_string(), CellScores::default()))
        .collect();
    let mut oracle_acc: Vec<(String, CellScores)> = GRID_CELLS[..2]
        .iter()
        .map(|(n, _, _)| (n.to_string(), CellScores::default()))
        .collect();
    let mut per_seed = Vec::new();

    for &seed in &args.seeds {
        let world = SeedWorld::build(args, seed)?;
        for (i, &(name, regime, mode)) in GRID_CELLS.iter().enumerate() {
            let model = world.train_cell(args, seed, name, regime, mode)?;
            let corrupted = world.evaluate(&model, &world.test_corrupted)?;
            grid_acc[i].1.add(&corrupted);
            per_seed.push((seed, name.to_string(), corrupted));
            if regime == Regime::Clean {
                let clean = world.evaluate(&model, &world.test_clean)?;
                oracle_acc[i].1.add(&clean);
            }
        }
    }

    let inv = 1.0 / args.seeds.len() as f64;
    for (_, s) in grid_acc.iter_mut().chain(oracle_acc.iter_mut()) {
        s.scale(inv);
    }
    Ok(ExperimentResult { grid: grid_acc, oracle: oracle_acc, per_seed })
}

/// Everything one seed's cells share: corpora, vocabularies, the estimated
/// channel, and the frozen test inputs.
struct SeedWorld {
    source_vocab: Arc<Vocabulary>,
    target_vocab: Arc<Vocabulary>,
    train_pairs: Vec<EncodedPair>,
    estimated_channel: ConfusionModel,
    test_clean: Vec<EncodedPair>,
    test_corrupted: Vec<EncodedPair>,
}

impl SeedWorld {
    fn build(args: &ExperimentArgs, seed: u64) -> Result<SeedWorld, PipelineError> {
        let task = SynthTask::new(args.synth.clone(), stream_seed(seed, "task"));
        let train_records = task.generate_corpus(args.train_pairs, stream_seed(seed, "train-corpus"));
        let test_records = task.generate_corpus(args.test_pairs, stream_seed(seed, "test-corpus"));
        let transcripts =
            task.generate_transcript_pairs(args.confusion_pairs, stream_seed(seed, "confusion-corpus"));

        let (sources, targets) = corpus_token_streams(&train_records, Unit::Char, None)?;
        let source_vocab = Arc::new(Vocabulary::build(sources, 1));
        let target_vocab = Arc::new(Vocabulary::build(targets, 1));

        let mut counts = ConfusionCounts::new();
        for pair in &transcripts {
            let r = source_vocab.encode(&Unit::Char.tokenize(&pair.reference, None)?);
            let h = source_vocab.encode(&Unit::Char.tokenize(&pair.hyp, None)?);
            let alignment = levenshtein_align(&r, &h);
            counts.record_alignment(&r, &h, &alignment);
        }
        let estimated_channel = normalize(counts, &source_vocab, 0.0);

        let (train_pairs, _) =
            encode_corpus(&train_records, Unit::Char, None, &source_vocab, &target_vocab)?;

        // a single corrupted test set per seed, shared by all cells
        let mut chan_rng = crate::seed::stream_rng(seed, "test-corrupt");
        let mut test_clean = Vec::with_capacity(test_records.len());
        let mut test_corrupted = Vec::with_capacity(test_records.len());
        for rec in &test_records {
            let target = target_vocab.encode(&Unit::Char.tokenize(&rec.target, None)?);
            let clean_ids = source_vocab.encode(&Unit::Char.tokenize(&rec.source, None)?);
            let corrupted_text = task.corrupt_text(&rec.source, &mut chan_rng);
            let corrupted_ids = source_vocab.encode(&Unit::Char.tokenize(&corrupted_text, None)?);
            test_clean.push(EncodedPair { source: clean_ids, target: target.clone() });
            test_corrupted.push(EncodedPair { source: corrupted_ids, target });
        }

        Ok(SeedWorld {
            source_vocab,
            target_vocab,
            train_pairs,
            estimated_channel,
            test_clean,
            test_corrupted,
        })
    }

    fn train_cell(
        &self,
        args: &ExperimentArgs,
        seed: u64,
        name: &str,
        regime: Regime,
        mode: Mode,
    ) -> Result<Model, PipelineError> {
        let mut config = ModelConfig::new(mode, self.source_vocab.clone(), self.target_vocab.clone());
        config.num_layers = args.num_layers;
        config.hidden_dim = args.hidden_dim;
        config.embed_dim = args.embed_dim;
        config.max_decode_len = args.synth.salient_per_source.1 + 3;
        let mut model = Model::new(config, stream_seed(seed, &format!("init/{name}")));

        let channel = match regime {
            Regime::Clean => None,
            _ => Some(&self.estimated_channel),
        };
        let cell_seed = stream_seed(seed, &format!("train/{name}"));
        let restarts = args.lr_restarts.max(1);
        let epochs_per_segment = (args.max_epochs / restarts).max(1);
        for segment in 0..restarts {
            let train_cfg = TrainConfig {
                regime,
                master_seed: stream_seed(cell_seed, &format!("segment{segment}")),
                max_epochs: epochs_per_segment,
                batch_size: args.batch_size,
                initial_lr: args.initial_lr,
                dropout: args.dropout,
                lambda_err: args.lambda_err,
                samples_per_story: args.samples_per_story,
                eval_interval: args.eval_interval,
                ss_k: args.ss_k,
                ..TrainConfig::default()
            };
            train(&mut model, &self.train_pairs, &train_cfg, channel)?;
        }
        Ok(model)
    }

    fn evaluate(&self, model: &Model, pairs: &[EncodedPair]) -> Result<CellScores, PipelineError> {
        let sources: Vec<_> = pairs.iter().map(|p| p.source.clone()).collect();
        let decoded = greedy_decode_batch(model, &sources)?;
        let scores = corpus_score(
            decoded
                .iter()
                .zip(pairs)
                .map(|(h, p)| (h.tokens.as_slice(), p.target.as_slice())),
        )?;
        Ok(CellScores::from_rouge(&scores))
    }
}
