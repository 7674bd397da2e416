//! The training recipe: mini-batch SGD with gradient clipping, scheduled
//! sampling with inverse-sigmoid decay, a validation-driven learning-rate
//! schedule, and the three data regimes (clean text, naively corrupted
//! text, and corrupted text with correctness supervision).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confusion::{sample_confused, ConfusionModel};
use crate::decode::greedy_decode_batch;
use crate::model::{Batch, BatchItem, ForwardOpts, Mode, Model, ModelError};
use crate::numerics::{clip_global_norm, sgd_step, Graph};
use crate::seed::{stream_rng, stream_seed};
use crate::vocab::TokenSeq;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which data the model trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Original clean sources.
    Clean,
    /// Channel-corrupted sources fed to an unmodified architecture.
    Naive,
    /// Channel-corrupted sources with correctness labels supervising the
    /// error estimator of `arnn_err`.
    Proposed,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Clean => "clean",
            Regime::Naive => "naive",
            Regime::Proposed => "proposed",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clean" => Ok(Regime::Clean),
            "naive" => Ok(Regime::Naive),
            "proposed" => Ok(Regime::Proposed),
            other => Err(format!("unknown regime {other:?} (expected clean|naive|proposed)")),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All trainer knobs. The defaults are the reference recipe; everything is
/// overridable via a flat TOML file with the same field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_divisor: f64,
    /// Validation cadence, as a fraction of an epoch in (0, 1].
    pub eval_interval: f64,
    pub dropout: f64,
    /// Global gradient-norm threshold.
    pub clip: f64,
    pub max_epochs: usize,
    /// Inverse-sigmoid decay constant for scheduled sampling.
    pub ss_k: f64,
    pub batch_size: usize,
    /// Fresh corruption draws per story per epoch (naive/proposed).
    pub samples_per_story: usize,
    pub regime: Regime,
    /// Weight of the correctness-estimation loss (proposed regime).
    pub lambda_err: f64,
    pub master_seed: u64,
    /// Held-out fraction for the validation set, in [0, 0.5]. Zero means
    /// validate on the training set itself.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            initial_lr: 0.1,
            lr_divisor: 1.15,
            eval_interval: 0.1,
            dropout: 0.05,
            clip: 10.0,
            max_epochs: 7,
            ss_k: 1.0,
            batch_size: 32,
            samples_per_story: 1,
            regime: Regime::Clean,
            lambda_err: 1.0,
            master_seed: 0,
            val_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<TrainConfig, TrainError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| TrainError::ConfigMismatch(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let mut problems = Vec::new();
        if self.initial_lr <= 0.0 {
            problems.push("initial_lr must be positive");
        }
        if self.lr_divisor <= 1.0 {
            problems.push("lr_divisor must exceed 1");
        }
        if !(self.eval_interval > 0.0 && self.eval_interval <= 1.0) {
            problems.push("eval_interval must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push("dropout must lie in [0, 1)");
        }
        if self.clip <= 0.0 {
            problems.push("clip must be positive");
        }
        if self.ss_k <= 0.0 {
            problems.push("ss_k must be positive");
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive");
        }
        if self.samples_per_story == 0 {
            problems.push("samples_per_story must be positive");
        }
        if self.lambda_err < 0.0 {
            problems.push("lambda_err must be non-negative");
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            problems.push("val_fraction must lie in [0, 0.5]");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::ConfigMismatch(problems.join("; ")))
        }
    }
}

/// Inverse-sigmoid teacher-forcing schedule: ε(p) = k/(k + exp(p/k)),
/// evaluated in an overflow-free form. Progress is measured in epochs.
pub fn teacher_forcing_prob(progress: f64, k: f64) -> f64 {
    debug_assert!(progress >= 0.0 && k > 0.0);
    let decay = (-progress / k).exp();
    k * decay / (k * decay + 1.0)
}

/// Divides the learning rate when validation NLL failed to improve on the
/// best seen so far (ties count as no improvement).
pub fn lr_schedule_step(current_lr: f64, best_val_nll: f64, new_val_nll: f64, divisor: f64) -> f64 {
    if new_val_nll >= best_val_nll {
        current_lr / divisor
    } else {
        current_lr
    }
}

/// One evaluation record. `train_loss` is the mean batch loss since the
/// previous evaluation (absent on the pre-training baseline row).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub progress: f64,
    pub train_loss: Option<f64>,
    pub val_nll: f64,
    pub learning_rate: f64,
    pub teacher_forcing: f64,
}

/// Evaluation history of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// CSV with a header row; floats are printed with full round-trip
    /// precision so reruns are byte-comparable.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("progress,train_loss,val_nll,learning_rate,teacher_forcing\n");
        for r in &self.records {
            let train = r.train_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.progress, train, r.val_nll, r.learning_rate, r.teacher_forcing
            );
        }
        out
    }

    pub fn write_file<P: AsRef<std::path::Path>>(&self, path: P) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv_string())
    }

    pub fn initial_val_nll(&self) -> Option<f64> {
        self.records.first().map(|r| r.val_nll)
    }

    pub fn best_val_nll(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_nll).fold(None, |acc, v| {
            Some(acc.map_or(v, |a: f64| a.min(v)))
        })
    }
}

/// A source/headline pair, already encoded. Targets carry no EOS; the
/// batcher appends it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: TokenSeq,
    pub target: TokenSeq,
}

struct EpochSample {
    pair_idx: usize,
    draw_idx: usize,
}

/// Trains `model` in place and returns the evaluation log.
///
/// The split, batch order, corruption draws, dropout, and scheduled-sampling
/// coins all derive from `cfg.master_seed` through named streams, so a rerun
/// with the same seed reproduces the log exactly.
pub fn train(
    model: &mut Model,
    pairs: &[EncodedPair],
    cfg: &TrainConfig,
    confusion: Option<&ConfusionModel>,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mode = model.config.mode;
    match (cfg.regime, mode) {
        (Regime::Proposed, Mode::ArnnErr) => {}
        (Regime::Proposed, other) => {
            return Err(TrainError::ConfigMismatch(format!(
                "the proposed regime requires mode arnn_err, got {other}"
            )))
        }
        (_, Mode::ArnnErr) => {
            return Err(TrainError::ConfigMismatch(
                "mode arnn_err requires the proposed regime (its estimator needs labels)".into(),
            ))
        }
        _ => {}
    }
    let needs_channel = matches!(cfg.regime, Regime::Naive | Regime::Proposed);
    if needs_channel && confusion.is_none() {
        return Err(TrainError::ConfigMismatch(format!(
            "the {} regime requires a confusion model",
            cfg.regime
        )));
    }

    // deterministic validation split: shuffled copy, tail held out
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    shuffle(&mut order, cfg.master_seed, "validation-split");
    let val_count = ((pairs.len() as f64) * cfg.val_fraction).round() as usize;
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if val_count == 0 {
        (order.clone(), order)
    } else {
        let split = pairs.len() - val_count;
        (order[..split].to_vec(), order[split..].to_vec())
    };
    if train_idx.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }

    // validation inputs are corrupted once per run, then frozen
    let val_items: Vec<BatchItem> = val_idx
        .iter()
        .map(|&i| make_item(&pairs[i], cfg, confusion, stream_seed(cfg.master_seed, &format!("val-corrupt/p{i}"))))
        .collect();
    let val_batches = build_batches(&val_items, cfg.batch_size)?;

    // one epoch covers every pair `samples_per_story` times
    let mut samples: Vec<EpochSample> = Vec::with_capacity(train_idx.len() * cfg.samples_per_story);
    for &pair_idx in &train_idx {
        for draw_idx in 0..cfg.samples_per_story {
            samples.push(EpochSample { pair_idx, draw_idx });
        }
    }
    // bucket by source length so padding stays minimal
    samples.sort_by_key(|s| (pairs[s.pair_idx].source.len(), s.pair_idx, s.draw_idx));
    let batch_bounds: Vec<(usize, usize)> = (0..samples.len())
        .step_by(cfg.batch_size)
        .map(|start| (start, (start + cfg.batch_size).min(samples.len())))
        .collect();
    let batches_per_epoch = batch_bounds.len();

    let mut log = TrainLog::default();
    let mut lr = cfg.initial_lr;
    let eval_opts = ForwardOpts::eval(mode);
    let mut best_val = validate_nll(model, &val_batches, &eval_opts)?;
    log.records.push(TrainRecord {
        progress: 0.0,
        train_loss: None,
        val_nll: best_val,
        learning_rate: lr,
        teacher_forcing: teacher_forcing_prob(0.0, cfg.ss_k),
    });

    let mut next_mark = cfg.eval_interval;
    let mut loss_acc = 0.0;
    let mut loss_count = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut batch_order: Vec<usize> = (0..batches_per_epoch).collect();
        shuffle(&mut batch_order, cfg.master_seed, &format!("batch-order/e{epoch}"));

        for (t, &bi) in batch_order.iter().enumerate() {
            let (start, end) = batch_bounds[bi];
            let items: Vec<BatchItem> = samples[start..end]
                .iter()
                .map(|s| {
                    let seed = stream_seed(
                        cfg.master_seed,
                        &format!("corrupt/e{epoch}/p{}/s{}", s.pair_idx, s.draw_idx),
                    );
                    make_item(&pairs[s.pair_idx], cfg, confusion, seed)
                })
                .collect();
            let batch = Batch::new(&items)?;

            let progress = epoch as f64 + t as f64 / batches_per_epoch as f64;
            let tf = teacher_forcing_prob(progress, cfg.ss_k);
            let opts = ForwardOpts::train(mode, cfg.dropout, tf, cfg.lambda_err);

            let mut g = Graph::new_train();
            let mut rng_drop = stream_rng(cfg.master_seed, &format!("dropout/e{epoch}/t{t}"));
            let mut rng_ss = stream_rng(cfg.master_seed, &format!("ss/e{epoch}/t{t}"));
            let parts = model.build_batch_loss(&mut g, &batch, &opts, &mut rng_drop, &mut rng_ss)?;
            let loss_value = g.value(parts.loss).item();
            g.backward(parts.loss).map_err(ModelError::from)?;
            g.flush_grads(&mut model.params);
            drop(g);

            clip_global_norm(&mut model.params, cfg.clip);
            sgd_step(&mut model.params, lr);

            loss_acc += loss_value;
            loss_count += 1;

            let progress_done = epoch as f64 + (t + 1) as f64 / batches_per_epoch as f64;
            if progress_done + 1e-12 >= next_mark {
                let val_nll = validate_nll(model, &val_batches, &eval_opts)?;
                lr = lr_schedule_step(lr, best_val, val_nll, cfg.lr_divisor);
                best_val = best_val.min(val_nll);
                log.records.push(TrainRecord {
                    progress: progress_done,
                    train_loss: Some(loss_acc / loss_count as f64),
                    val_nll,
                    learning_rate: lr,
                    teacher_forcing: teacher_forcing_prob(progress_done, cfg.ss_k),
                });
                loss_acc = 0.0;
                loss_count = 0;
                while next_mark <= progress_done + 1e-12 {
                    next_mark += cfg.eval_interval;
                }
            }
        }
    }
    Ok(log)
}

fn make_item(
    pair: &EncodedPair,
    cfg: &TrainConfig,
    confusion: Option<&ConfusionModel>,
    seed: u64,
) -> BatchItem {
    match cfg.regime {
        Regime::Clean => BatchItem::clean(pair.source.clone(), pair.target.clone()),
        Regime::Naive => {
            let sample = sample_confused(&pair.source, confusion.expect("checked"), seed);
            BatchItem::clean(sample.corrupted, pair.target.clone())
        }
        Regime::Proposed => {
            let sample = sample_confused(&pair.source, confusion.expect("checked"), seed);
            BatchItem::corrupted(&sample, pair.target.clone())
        }
    }
}

fn build_batches(items: &[BatchItem], batch_size: usize) -> Result<Vec<Batch>, ModelError> {
    let mut sorted: Vec<&BatchItem> = items.iter().collect();
    sorted.sort_by_key(|it| it.source.len());
    sorted
        .chunks(batch_size)
        .map(|chunk| {
            let owned: Vec<BatchItem> = chunk.iter().map(|&it| it.clone()).collect();
            Batch::new(&owned)
        })
        .collect()
}

/// Mean per-sequence headline NLL over the validation batches, fully
/// teacher-forced, dropout off.
fn validate_nll(model: &Model, batches: &[Batch], opts: &ForwardOpts) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let mut g = Graph::new();
        let mut rng_a = stream_rng(0, "unused");
        let mut rng_b = stream_rng(0, "unused");
        let parts = model.build_batch_loss(&mut g, batch, opts, &mut rng_a, &mut rng_b)?;
        total += parts.nll * batch.len() as f64;
        count += batch.len();
    }
    Ok(total / count as f64)
}

fn shuffle(indices: &mut [usize], master: u64, path: &str) {
    use rand::seq::SliceRandom;
    let mut rng = stream_rng(master, path);
    indices.shuffle(&mut rng);
}

/// Fraction of pairs whose greedy decode reproduces the target exactly.
pub fn exact_match_rate(model: &Model, pairs: &[EncodedPair]) -> Result<f64, ModelError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let sources: Vec<_> = pairs.iter().map(|p| p.source.clone()).collect();
    let decoded = greedy_decode_batch(model, &sources)?;
    let hits = decoded
        .iter()
        .zip(pairs)
        .filter(|(h, p)| h.tokens == p.target)
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}
