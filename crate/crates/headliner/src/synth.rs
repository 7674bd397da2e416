//! Synthetic salient-subsequence corpora.
//!
//! Sources are random symbol strings; the headline is the source's salient
//! symbols in order. In clean text every salient symbol is announced by a
//! cue symbol directly before it, and filler text follows a skewed unigram
//! law with partner-bigram structure. The substitution channel ignores all
//! of that, so corrupted positions are detectable from sequential context:
//! a salient symbol without its cue is almost surely fake, a broken partner
//! bigram marks a corrupted filler, and rare symbols are disproportionately
//! corruption products. That detectability is what a per-token correctness
//! estimator can learn and feed back into attention.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::confusion::{ConfusionError, ConfusionModel};
use crate::corpus::{CorpusRecord, TranscriptPair};
use crate::seed::stream_rng;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Distinct symbols in the alphabet (at most 52).
    pub vocab_size: usize,
    /// How many symbols are salient (headline-worthy).
    pub salient_count: usize,
    /// How many symbols serve as cues. Cues never occur as filler, so in
    /// clean text they appear exactly once before each salient symbol.
    pub cue_count: usize,
    /// Source length bounds, inclusive.
    pub source_len: (usize, usize),
    /// Salient symbols per source, inclusive bounds.
    pub salient_per_source: (usize, usize),
    /// Probability that a filler position repeats its predecessor's partner
    /// symbol, giving clean text a bigram signature.
    pub partner_follow_prob: f64,
    /// Per-position substitution probability of the true channel.
    pub substitution_rate: f64,
    /// Distinct substitution targets per symbol.
    pub confusable_count: usize,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            vocab_size: 50,
            salient_count: 14,
            cue_count: 3,
            source_len: (10, 16),
            salient_per_source: (2, 4),
            partner_follow_prob: 0.55,
            substitution_rate: 0.2,
            confusable_count: 3,
        }
    }
}

/// A fully materialized task: alphabet partition, filler statistics, and
/// the ground-truth substitution channel.
#[derive(Debug, Clone)]
pub struct SynthTask {
    config: SynthConfig,
    symbols: Vec<char>,
    is_salient: Vec<bool>,
    salient: Vec<usize>,
    cues: Vec<usize>,
    filler: Vec<usize>,
    /// Cumulative unigram distribution over `filler`.
    filler_cdf: Vec<f64>,
    /// Partner symbol of each filler symbol (indices into `symbols`).
    partner: Vec<usize>,
    /// Per symbol: (target symbol, probability) substitution entries.
    channel: Vec<Vec<(usize, f64)>>,
}

impl SynthTask {
    pub fn new(config: SynthConfig, task_seed: u64) -> SynthTask {
        assert!(config.vocab_size <= 52, "alphabet holds at most 52 symbols");
        assert!(config.salient_count + config.cue_count < config.vocab_size);
        assert!(config.cue_count >= 1);
        assert!(config.salient_per_source.0 >= 1);
        assert!(config.salient_per_source.0 <= config.salient_per_source.1);
        // a source must fit its cue+salient pairs plus some filler
        assert!(config.source_len.1 >= 2 * config.salient_per_source.1 + 2);
        assert!((0.0..1.0).contains(&config.substitution_rate));

        let symbols: Vec<char> = ('a'..='z').chain('A'..='Z').take(config.vocab_size).collect();

        let mut rng = stream_rng(task_seed, "task/salient");
        let mut order: Vec<usize> = (0..config.vocab_size).collect();
        shuffle(&mut order, &mut rng);
        let mut salient = order[..config.salient_count].to_vec();
        salient.sort_unstable();
        let mut cues = order[config.salient_count..config.salient_count + config.cue_count].to_vec();
        cues.sort_unstable();

        let mut is_salient = vec![false; config.vocab_size];
        for &i in &salient {
            is_salient[i] = true;
        }
        let mut is_cue = vec![false; config.vocab_size];
        for &i in &cues {
            is_cue[i] = true;
        }
        let filler: Vec<usize> = (0..config.vocab_size)
            .filter(|&i| !is_salient[i] && !is_cue[i])
            .collect();

        // skewed unigram law over filler symbols
        let weights: Vec<f64> = (0..filler.len()).map(|i| 1.0 / (i as f64 + 3.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut filler_cdf = Vec::with_capacity(filler.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            filler_cdf.push(acc);
        }

        // fixed partner map over fillers (a shifted pairing)
        let mut partner = vec![0usize; config.vocab_size];
        for (pos, &f) in filler.iter().enumerate() {
            partner[f] = filler[(pos + 1) % filler.len()];
        }

        // substitution channel with uniform targets
        let mut rng = stream_rng(task_seed, "task/channel");
        let mut channel = Vec::with_capacity(config.vocab_size);
        for i in 0..config.vocab_size {
            let mut targets = Vec::with_capacity(config.confusable_count);
            while targets.len() < config.confusable_count.min(config.vocab_size - 1) {
                let t = rng.random_range(0..config.vocab_size);
                if t != i && !targets.contains(&t) {
                    targets.push(t);
                }
            }
            let split = [0.6, 0.25, 0.15];
            let rows: Vec<(usize, f64)> = targets
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let share = if k < split.len() { split[k] } else { 0.0 };
                    (t, config.substitution_rate * share)
                })
                .collect();
            channel.push(rows);
        }

        SynthTask {
            config,
            symbols,
            is_salient,
            salient,
            cues,
            filler,
            filler_cdf,
            partner,
            channel,
        }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn symbol(&self, idx: usize) -> char {
        self.symbols[idx]
    }

    pub fn is_salient_symbol(&self, c: char) -> bool {
        self.symbols
            .iter()
            .position(|&s| s == c)
            .is_some_and(|i| self.is_salient[i])
    }

    fn draw_filler(&self, rng: &mut ChaCha12Rng) -> usize {
        let u: f64 = rng.random();
        let pos = self.filler_cdf.partition_point(|&c| c <= u).min(self.filler.len() - 1);
        self.filler[pos]
    }

    /// One source/headline pair. The source interleaves cue+salient pairs
    /// with partner-structured filler; the headline is the salient symbols
    /// in order.
    pub fn generate_record(&self, rng: &mut ChaCha12Rng) -> CorpusRecord {
        let (slo, shi) = self.config.salient_per_source;
        let k = rng.random_range(slo..=shi);
        let (llo, lhi) = self.config.source_len;
        let len = rng.random_range(llo.max(2 * k + 2)..=lhi);
        let filler_n = len - 2 * k;

        // lay out k cue+salient blocks among the filler positions
        let mut blocks: Vec<bool> = std::iter::repeat_n(true, k)
            .chain(std::iter::repeat_n(false, filler_n))
            .collect();
        shuffle_bools(&mut blocks, rng);

        let mut source = Vec::with_capacity(len);
        let mut headline = Vec::with_capacity(k);
        for is_pair in blocks {
            if is_pair {
                source.push(self.cues[rng.random_range(0..self.cues.len())]);
                let s = self.salient[rng.random_range(0..self.salient.len())];
                source.push(s);
                headline.push(s);
            } else {
                let prev = source.last().copied();
                let follow = prev.is_some_and(|p| self.filler.contains(&p))
                    && rng.random::<f64>() < self.config.partner_follow_prob;
                let f = if follow {
                    self.partner[prev.unwrap()]
                } else {
                    self.draw_filler(rng)
                };
                source.push(f);
            }
        }

        CorpusRecord {
            source: source.iter().map(|&i| self.symbols[i]).collect(),
            target: headline.iter().map(|&i| self.symbols[i]).collect(),
            reference: None,
        }
    }

    pub fn generate_corpus(&self, n: usize, seed: u64) -> Vec<CorpusRecord> {
        let mut rng = stream_rng(seed, "corpus");
        (0..n).map(|_| self.generate_record(&mut rng)).collect()
    }

    /// Applies the ground-truth channel to a symbol string.
    pub fn corrupt_text(&self, text: &str, rng: &mut ChaCha12Rng) -> String {
        text.chars()
            .map(|c| {
                let Some(i) = self.symbols.iter().position(|&s| s == c) else {
                    return c;
                };
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(t, p) in &self.channel[i] {
                    acc += p;
                    if u < acc {
                        return self.symbols[t];
                    }
                }
                c
            })
            .collect()
    }

    /// Reference/hypothesis pairs for channel estimation: fresh sources
    /// pushed through the ground-truth channel.
    pub fn generate_transcript_pairs(&self, n: usize, seed: u64) -> Vec<TranscriptPair> {
        let mut gen_rng = stream_rng(seed, "transcripts/source");
        let mut chan_rng = stream_rng(seed, "transcripts/channel");
        (0..n)
            .map(|_| {
                let rec = self.generate_record(&mut gen_rng);
                let hyp = self.corrupt_text(&rec.source, &mut chan_rng);
                TranscriptPair { reference: rec.source, hyp }
            })
            .collect()
    }

    /// The ground-truth channel expressed over a vocabulary (for corrupting
    /// encoded sequences directly). Symbols missing from the vocabulary or
    /// targets that would leave it fold their mass into the identity.
    pub fn true_channel(&self, vocab: &Vocabulary) -> Result<ConfusionModel, ConfusionError> {
        let mut rows = Vec::new();
        for (i, entries) in self.channel.iter().enumerate() {
            let Some(p) = vocab.id_of(&self.symbols[i].to_string()) else {
                continue;
            };
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(entries.len() + 1);
            let mut survive = 1.0 - self.config.substitution_rate;
            for &(t, prob) in entries {
                match vocab.id_of(&self.symbols[t].to_string()) {
                    Some(q) => row.push((q, prob)),
                    None => survive += prob,
                }
            }
            row.push((p, survive));
            rows.push((p, row));
        }
        ConfusionModel::from_probability_rows(vocab, rows)
    }
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha12Rng) {
    use rand::seq::SliceRandom;
    indices.shuffle(rng);
}

fn shuffle_bools(slots: &mut [bool], rng: &mut ChaCha12Rng) {
    use rand::seq::SliceRandom;
    slots.shuffle(rng);
}
