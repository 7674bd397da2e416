//! The recognition-error channel: a row-stochastic substitution matrix
//! P(q|p) estimated from aligned transcript pairs, plus the stochastic
//! corruption process built on it.
//!
//! Corruption is length-preserving: each position independently redraws its
//! token from that token's row. Insertions and deletions observed during
//! alignment are tallied for diagnostics but do not enter the channel.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::align::{Alignment, Step};
use crate::vocab::{Special, TokenId, TokenSeq, Vocabulary};

const ROW_SUM_TOLERANCE: f64 = 1e-9;
const WRITE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConfusionError {
    #[error("row for token {0} sums to {1}, not 1")]
    BadRowSum(TokenId, f64),
    #[error("probability {1} out of range for token {0}")]
    BadProbability(TokenId, f64),
    #[error("confusion file is malformed: {0}")]
    MalformedFile(String),
    #[error("confusion matrix was built for a different vocabulary (checksum {expected}, got {found})")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw alignment tallies: count(q; p) over match/substitute steps, plus
/// insertion/deletion counters kept for inspection only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    table: BTreeMap<TokenId, BTreeMap<TokenId, u64>>,
    pub insertions: u64,
    pub deletions: u64,
}

impl ConfusionCounts {
    pub fn new() -> ConfusionCounts {
        ConfusionCounts::default()
    }

    pub fn record_pair(&mut self, reference: TokenId, hypothesis: TokenId) {
        *self
            .table
            .entry(reference)
            .or_default()
            .entry(hypothesis)
            .or_insert(0) += 1;
    }

    /// Tallies one aligned utterance pair. Only match/substitute steps
    /// contribute to the table.
    pub fn record_alignment(&mut self, reference: &[TokenId], hypothesis: &[TokenId], alignment: &Alignment) {
        for step in &alignment.steps {
            match *step {
                Step::Match { ref_pos, hyp_pos } | Step::Substitute { ref_pos, hyp_pos } => {
                    self.record_pair(reference[ref_pos], hypothesis[hyp_pos]);
                }
                Step::Insert { .. } => self.insertions += 1,
                Step::Delete { .. } => self.deletions += 1,
            }
        }
    }

    pub fn get(&self, reference: TokenId, hypothesis: TokenId) -> u64 {
        self.table
            .get(&reference)
            .and_then(|row| row.get(&hypothesis))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Non-special reference tokens with at least one tally.
    pub fn seen_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.table.keys().copied()
    }
}

/// Tallies a stream of aligned pairs into one count table.
pub fn count_confusions<'a, I>(pairs: I) -> ConfusionCounts
where
    I: IntoIterator<Item = (&'a [TokenId], &'a [TokenId], &'a Alignment)>,
{
    let mut counts = ConfusionCounts::new();
    for (r, h, a) in pairs {
        counts.record_alignment(r, h, a);
    }
    counts
}

/// One categorical row, sparse over the vocabulary. Entries are sorted by
/// token id; `cum` is the running sum used for inverse-CDF sampling.
#[derive(Debug, Clone, PartialEq)]
struct Row {
    entries: Vec<(TokenId, f64)>,
    cum: Vec<f64>,
}

impl Row {
    fn new(mut entries: Vec<(TokenId, f64)>) -> Row {
        entries.sort_by_key(|&(q, _)| q);
        entries.retain(|&(_, p)| p > 0.0);
        let mut cum = Vec::with_capacity(entries.len());
        let mut acc = 0.0;
        for &(_, p) in &entries {
            acc += p;
            cum.push(acc);
        }
        Row { entries, cum }
    }

    fn sum(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn prob(&self, q: TokenId) -> f64 {
        match self.entries.binary_search_by_key(&q, |&(t, _)| t) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    fn sample(&self, u: f64) -> TokenId {
        let i = self.cum.partition_point(|&c| c <= u);
        let i = i.min(self.entries.len() - 1);
        self.entries[i].0
    }
}

/// Row-stochastic substitution channel over a source vocabulary.
///
/// Tokens without an explicit row (unseen in the alignment data) and all
/// special tokens pass through unchanged: their implicit row is the
/// identity.
#[derive(Debug, Clone)]
pub struct ConfusionModel {
    vocab_size: usize,
    vocab_checksum: String,
    rows: BTreeMap<TokenId, Row>,
    /// Raw tallies retained for inspection when built via [`normalize`].
    pub counts: Option<ConfusionCounts>,
}

/// Normalizes a count table into a channel: row p is count(q;p)/Σ_k count(k;p).
///
/// `smoothing` adds λ pseudo-counts to every content token of the vocabulary
/// before normalizing (0.0 leaves the counts untouched). Special tokens are
/// forced to identity rows regardless of tallies.
pub fn normalize(counts: ConfusionCounts, vocab: &Vocabulary, smoothing: f64) -> ConfusionModel {
    let mut rows = BTreeMap::new();
    for (&p, tallies) in &counts.table {
        if p < Special::COUNT {
            continue; // forced identity
        }
        let mut entries: Vec<(TokenId, f64)> = Vec::new();
        let mut total = 0.0;
        if smoothing > 0.0 {
            for q in Special::COUNT..vocab.len() {
                let c = tallies.get(&q).copied().unwrap_or(0) as f64 + smoothing;
                entries.push((q, c));
                total += c;
            }
            // smoothing never reaches special columns; keep whatever mass
            // the raw tallies put there
            for (&q, &c) in tallies.iter().filter(|(&q, _)| q < Special::COUNT) {
                entries.push((q, c as f64));
                total += c as f64;
            }
        } else {
            for (&q, &c) in tallies {
                entries.push((q, c as f64));
                total += c as f64;
            }
        }
        if total <= 0.0 {
            continue;
        }
        for e in &mut entries {
            e.1 /= total;
        }
        rows.insert(p, Row::new(entries));
    }
    ConfusionModel {
        vocab_size: vocab.len(),
        vocab_checksum: vocab.checksum(),
        rows,
        counts: Some(counts),
    }
}

impl ConfusionModel {
    /// An identity channel: every token survives with probability 1.
    pub fn identity(vocab: &Vocabulary) -> ConfusionModel {
        ConfusionModel {
            vocab_size: vocab.len(),
            vocab_checksum: vocab.checksum(),
            rows: BTreeMap::new(),
            counts: None,
        }
    }

    /// Builds a channel from explicit probability rows; rows must sum to 1
    /// within 1e-9. Tokens without a row behave as identity.
    pub fn from_probability_rows(
        vocab: &Vocabulary,
        rows: impl IntoIterator<Item = (TokenId, Vec<(TokenId, f64)>)>,
    ) -> Result<ConfusionModel, ConfusionError> {
        let mut built = BTreeMap::new();
        for (p, entries) in rows {
            for &(q, prob) in &entries {
                if !(0.0..=1.0).contains(&prob) || !prob.is_finite() {
                    return Err(ConfusionError::BadProbability(q, prob));
                }
            }
            let row = Row::new(entries);
            if (row.sum() - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ConfusionError::BadRowSum(p, row.sum()));
            }
            if p >= Special::COUNT {
                built.insert(p, row);
            }
        }
        Ok(ConfusionModel {
            vocab_size: vocab.len(),
            vocab_checksum: vocab.checksum(),
            rows: built,
            counts: None,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_checksum(&self) -> &str {
        &self.vocab_checksum
    }

    /// P(q|p). Implicit identity rows return 1 on the diagonal, 0 elsewhere.
    pub fn probability(&self, p: TokenId, q: TokenId) -> f64 {
        match self.rows.get(&p) {
            Some(row) if p >= Special::COUNT => row.prob(q),
            _ => {
                if p == q {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// P(p|p): the channel's self-identity mass, i.e. the probability that
    /// token p comes through the recognizer unaltered.
    pub fn correctness_probability(&self, p: TokenId) -> f64 {
        self.probability(p, p)
    }

    /// Tokens with an explicit (non-identity-by-default) row.
    pub fn explicit_rows(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.rows.keys().copied()
    }

    /// Checks that every explicit row sums to 1 within 1e-9.
    pub fn validate(&self) -> Result<(), ConfusionError> {
        for (&p, row) in &self.rows {
            if (row.sum() - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ConfusionError::BadRowSum(p, row.sum()));
            }
        }
        Ok(())
    }

    /// TSV serialization: a checksum header, then `p<TAB>q<TAB>prob` rows
    /// (entries below 1e-12 omitted), ordered by p then q.
    pub fn write_file<P: AsRef<Path>>(&self, path: P, vocab: &Vocabulary) -> Result<(), ConfusionError> {
        let mut out = String::new();
        out.push_str(&format!("#vocab\t{}\n", self.vocab_checksum));
        for (&p, row) in &self.rows {
            let p_tok = vocab.token(p).unwrap_or("?");
            for &(q, prob) in &row.entries {
                if prob < WRITE_EPSILON {
                    continue;
                }
                let q_tok = vocab.token(q).unwrap_or("?");
                out.push_str(&format!("{p_tok}\t{q_tok}\t{prob}\n"));
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a TSV channel and checks it against `vocab`'s checksum. Rows
    /// whose written sum drifted (entries under 1e-12 are omitted on write)
    /// are renormalized; larger deviations are rejected.
    pub fn read_file<P: AsRef<Path>>(path: P, vocab: &Vocabulary) -> Result<ConfusionModel, ConfusionError> {
        let f = fs::File::open(path)?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| ConfusionError::MalformedFile("empty file".into()))??;
        let checksum = header
            .strip_prefix("#vocab\t")
            .ok_or_else(|| ConfusionError::MalformedFile("missing #vocab header".into()))?
            .to_string();
        if checksum != vocab.checksum() {
            return Err(ConfusionError::VocabMismatch {
                expected: checksum,
                found: vocab.checksum(),
            });
        }
        let mut raw: BTreeMap<TokenId, Vec<(TokenId, f64)>> = BTreeMap::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (p, q, prob) = match (parts.next(), parts.next(), parts.next()) {
                (Some(p), Some(q), Some(prob)) => (p, q, prob),
                _ => {
                    return Err(ConfusionError::MalformedFile(format!(
                        "line {} is not p<TAB>q<TAB>prob",
                        lineno + 2
                    )))
                }
            };
            let p = vocab
                .id_of(p)
                .ok_or_else(|| ConfusionError::MalformedFile(format!("unknown token {p:?}")))?;
            let q = vocab
                .id_of(q)
                .ok_or_else(|| ConfusionError::MalformedFile(format!("unknown token {q:?}")))?;
            let prob: f64 = prob
                .parse()
                .map_err(|_| ConfusionError::MalformedFile(format!("bad probability {prob:?}")))?;
            if !(0.0..=1.0).contains(&prob) || !prob.is_finite() {
                return Err(ConfusionError::BadProbability(q, prob));
            }
            raw.entry(p).or_default().push((q, prob));
        }
        let mut rows = BTreeMap::new();
        for (p, entries) in raw {
            let mut row = Row::new(entries);
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(ConfusionError::BadRowSum(p, sum));
            }
            if sum != 1.0 {
                for e in &mut row.entries {
                    e.1 /= sum;
                }
                row = Row::new(row.entries);
            }
            rows.insert(p, row);
        }
        Ok(ConfusionModel {
            vocab_size: vocab.len(),
            vocab_checksum: checksum,
            rows,
            counts: None,
        })
    }
}

/// A corrupted token sequence with per-position correctness labels
/// (label = true iff the position survived unaltered).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptedSample {
    pub original: TokenSeq,
    pub corrupted: TokenSeq,
    pub labels: Vec<bool>,
}

/// Draws a corrupted copy of `source`: position j independently samples from
/// P(·|x_j). Special tokens always pass through. Deterministic in
/// (source, model, seed).
pub fn sample_confused(source: &[TokenId], model: &ConfusionModel, seed: u64) -> CorruptedSample {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut corrupted = Vec::with_capacity(source.len());
    for &x in source {
        let y = match model.rows.get(&x) {
            Some(row) if x >= Special::COUNT => {
                let u: f64 = rng.random();
                row.sample(u)
            }
            _ => x,
        };
        corrupted.push(y);
    }
    let labels = source
        .iter()
        .zip(&corrupted)
        .map(|(a, b)| a == b)
        .collect();
    CorruptedSample {
        original: source.to_vec(),
        corrupted,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc_vocab() -> Vocabulary {
        Vocabulary::from_content_tokens(["a", "b", "c"].map(String::from))
    }

    fn ids(v: &Vocabulary, s: &str) -> Vec<TokenId> {
        s.chars().map(|c| v.id_of(&c.to_string()).unwrap()).collect()
    }

    #[test]
    fn hand_counts() {
        let v = abc_vocab();
        let (a, b, c) = (v.id_of("a").unwrap(), v.id_of("b").unwrap(), v.id_of("c").unwrap());
        let mut counts = ConfusionCounts::new();
        for (p, q) in [(a, a), (b, b), (a, a), (b, b), (a, c)] {
            counts.record_pair(p, q);
        }
        assert_eq!(counts.get(a, a), 2);
        assert_eq!(counts.get(a, c), 1);
        assert_eq!(counts.get(b, b), 2);
        assert_eq!(counts.get(c, c), 0);

        let model = normalize(counts, &v, 0.0);
        assert!((model.probability(a, a) - 2.0 / 3.0).abs() < 1e-12);
        assert!((model.probability(a, c) - 1.0 / 3.0).abs() < 1e-12);
        assert!((model.probability(b, b) - 1.0).abs() < 1e-12);
        model.validate().unwrap();
    }

    #[test]
    fn unseen_token_gets_identity_row() {
        let v = abc_vocab();
        let model = normalize(ConfusionCounts::new(), &v, 0.0);
        let c = v.id_of("c").unwrap();
        assert_eq!(model.probability(c, c), 1.0);
        assert_eq!(model.probability(c, v.id_of("a").unwrap()), 0.0);
        assert_eq!(model.correctness_probability(c), 1.0);
    }

    #[test]
    fn empty_stream_empty_table() {
        let counts = count_confusions(std::iter::empty());
        assert!(counts.is_empty());
    }

    #[test]
    fn aligned_self_pairs_are_diagonal() {
        let v = abc_vocab();
        let r = ids(&v, "abcba");
        let alignment = crate::align::levenshtein_align(&r, &r);
        let mut counts = ConfusionCounts::new();
        counts.record_alignment(&r, &r, &alignment);
        for &p in &r {
            for q in 0..v.len() {
                if q != p {
                    assert_eq!(counts.get(p, q), 0);
                }
            }
        }
        assert_eq!(counts.get(r[0], r[0]), 2); // 'a' twice
    }

    #[test]
    fn specials_are_never_corrupted() {
        let v = abc_vocab();
        let a = v.id_of("a").unwrap();
        let mut counts = ConfusionCounts::new();
        // adversarial tallies against a special row
        counts.record_pair(Special::Num.id(), a);
        let model = normalize(counts, &v, 0.0);
        assert_eq!(model.correctness_probability(Special::Num.id()), 1.0);
        let sample = sample_confused(&[Special::Num.id(), a], &model, 9);
        assert_eq!(sample.corrupted[0], Special::Num.id());
    }

    #[test]
    fn identity_model_copies_input() {
        let v = abc_vocab();
        let model = ConfusionModel::identity(&v);
        let x = ids(&v, "abcab");
        let s = sample_confused(&x, &model, 123);
        assert_eq!(s.corrupted, x);
        assert!(s.labels.iter().all(|&l| l));
    }

    #[test]
    fn degenerate_row_always_substitutes() {
        let v = abc_vocab();
        let (a, b) = (v.id_of("a").unwrap(), v.id_of("b").unwrap());
        let model = ConfusionModel::from_probability_rows(&v, [(a, vec![(b, 1.0)])]).unwrap();
        let s = sample_confused(&[a, a, a], &model, 5);
        assert_eq!(s.corrupted, vec![b, b, b]);
        assert!(s.labels.iter().all(|&l| !l));
        assert_eq!(model.correctness_probability(a), 0.0);
    }

    #[test]
    fn sampling_is_reproducible_and_labels_consistent() {
        let v = abc_vocab();
        let (a, b, c) = (v.id_of("a").unwrap(), v.id_of("b").unwrap(), v.id_of("c").unwrap());
        let model = ConfusionModel::from_probability_rows(
            &v,
            [(a, vec![(a, 0.5), (b, 0.3), (c, 0.2)]), (b, vec![(b, 0.7), (c, 0.3)])],
        )
        .unwrap();
        let x = vec![a, b, a, c, b, a];
        let s1 = sample_confused(&x, &model, 77);
        let s2 = sample_confused(&x, &model, 77);
        assert_eq!(s1, s2);
        for (j, &l) in s1.labels.iter().enumerate() {
            assert_eq!(l, s1.original[j] == s1.corrupted[j]);
        }
    }

    #[test]
    fn empirical_frequencies_match_rows() {
        let v = abc_vocab();
        let (a, b, c) = (v.id_of("a").unwrap(), v.id_of("b").unwrap(), v.id_of("c").unwrap());
        let model = ConfusionModel::from_probability_rows(
            &v,
            [(a, vec![(a, 0.8), (b, 0.15), (c, 0.05)])],
        )
        .unwrap();
        let n = 100_000;
        let x = vec![a; n];
        let s = sample_confused(&x, &model, 2024);
        let mut freq = [0.0f64; 3];
        for &y in &s.corrupted {
            if y == a {
                freq[0] += 1.0;
            } else if y == b {
                freq[1] += 1.0;
            } else {
                freq[2] += 1.0;
            }
        }
        for f in &mut freq {
            *f /= n as f64;
        }
        assert!((freq[0] - 0.8).abs() < 0.01);
        assert!((freq[1] - 0.15).abs() < 0.01);
        assert!((freq[2] - 0.05).abs() < 0.01);
    }

    #[test]
    fn tsv_round_trip_checks_checksum() {
        let v = abc_vocab();
        let (a, b) = (v.id_of("a").unwrap(), v.id_of("b").unwrap());
        let model =
            ConfusionModel::from_probability_rows(&v, [(a, vec![(a, 0.75), (b, 0.25)])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conf.tsv");
        model.write_file(&path, &v).unwrap();
        let back = ConfusionModel::read_file(&path, &v).unwrap();
        assert_eq!(back.probability(a, a), 0.75);
        back.validate().unwrap();

        let other = Vocabulary::from_content_tokens(["x"].map(String::from));
        assert!(matches!(
            ConfusionModel::read_file(&path, &other),
            Err(ConfusionError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn smoothing_spreads_mass() {
        let v = abc_vocab();
        let a = v.id_of("a").unwrap();
        let mut counts = ConfusionCounts::new();
        counts.record_pair(a, a);
        let model = normalize(counts, &v, 1.0);
        // (1+1)/(1+3) on the diagonal, 1/4 for b and c
        assert!((model.probability(a, a) - 0.5).abs() < 1e-12);
        assert!((model.probability(a, v.id_of("b").unwrap()) - 0.25).abs() < 1e-12);
        model.validate().unwrap();
    }
}
