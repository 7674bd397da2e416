//! JSONL corpus records and ingestion: preprocessing, tokenization,
//! encoding, and the UNK-rate filter applied to headlines.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::training::EncodedPair;
use crate::vocab::{Lexicon, Unit, VocabError, Vocabulary};

/// Headlines with a higher UNK fraction than this are dropped at ingest.
pub const UNK_DROP_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {0}: {1}")]
    BadRecord(usize, String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One story/headline pair. `reference` optionally carries the clean
/// transcript when `source` is a recognizer hypothesis.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CorpusRecord {
    pub source: String,
    pub target: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// One reference/hypothesis transcript pair for channel estimation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TranscriptPair {
    #[serde(rename = "ref")]
    pub reference: String,
    pub hyp: String,
}

/// Corruption output: the original and corrupted renderings plus the
/// 0/1 per-position survival labels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CorruptRecord {
    pub source: String,
    pub corrupted: String,
    pub labels: Vec<u8>,
}

/// Generation output for one input.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenRecord {
    pub source: String,
    pub headline: String,
    pub score: f64,
}

pub fn read_jsonl<T: DeserializeOwned, P: AsRef<Path>>(path: P) -> Result<Vec<T>, CorpusError> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| CorpusError::BadRecord(i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, P: AsRef<Path>>(path: P, records: &[T]) -> Result<(), CorpusError> {
    let mut f = fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// What ingestion kept and why records were dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub kept: usize,
    /// Headline UNK fraction strictly above [`UNK_DROP_THRESHOLD`].
    pub dropped_unk: usize,
    /// Source or headline empty after preprocessing/tokenization.
    pub dropped_empty: usize,
}

/// Tokenizes and encodes records against the two vocabularies, dropping
/// pairs whose headline carries more than 10% UNK and pairs that come out
/// empty. Sources use `unit`; headlines are always characters.
pub fn encode_corpus(
    records: &[CorpusRecord],
    unit: Unit,
    lexicon: Option<&Lexicon>,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
) -> Result<(Vec<EncodedPair>, IngestReport), CorpusError> {
    let mut pairs = Vec::with_capacity(records.len());
    let mut report = IngestReport::default();
    for rec in records {
        let src_tokens = unit.tokenize(&rec.source, lexicon)?;
        let tgt_tokens = Unit::Char.tokenize(&rec.target, None)?;
        if src_tokens.is_empty() || tgt_tokens.is_empty() {
            report.dropped_empty += 1;
            continue;
        }
        let source = source_vocab.encode(&src_tokens);
        let target = target_vocab.encode(&tgt_tokens);
        if target_vocab.unk_fraction(&target) > UNK_DROP_THRESHOLD {
            report.dropped_unk += 1;
            continue;
        }
        report.kept += 1;
        pairs.push(EncodedPair { source, target });
    }
    Ok((pairs, report))
}

/// Token streams for vocabulary building: sources under `unit`, headlines
/// as characters.
pub fn corpus_token_streams(
    records: &[CorpusRecord],
    unit: Unit,
    lexicon: Option<&Lexicon>,
) -> Result<(Vec<Vec<String>>, Vec<Vec<String>>), CorpusError> {
    let mut sources = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for rec in records {
        sources.push(unit.tokenize(&rec.source, lexicon)?);
        targets.push(Unit::Char.tokenize(&rec.target, None)?);
    }
    Ok((sources, targets))
}
