//! ROUGE-1/2/L scoring of generated headlines against references, over the
//! same token unit the model consumes.

use std::collections::HashMap;

use thiserror::Error;

use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference has no {0}-grams to score against")]
    DegenerateInput(usize),
    #[error("no valid pairs to aggregate")]
    EmptyCorpus,
}

/// Recall/precision/F1 triple for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Components {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Components {
    fn from_rp(recall: f64, precision: f64) -> Components {
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        Components { recall, precision, f1 }
    }
}

/// ROUGE-1, ROUGE-2, and ROUGE-L for one pair or a corpus mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScores {
    pub rouge1: Components,
    pub rouge2: Components,
    pub rouge_l: Components,
}

fn ngram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap scores. Recall divides by the reference's n-gram
/// count, precision by the candidate's.
pub fn rouge_n(candidate: &[TokenId], reference: &[TokenId], n: usize) -> Result<Components, EvalError> {
    assert!(n >= 1, "n-gram order must be positive");
    let ref_counts = ngram_counts(reference, n);
    if ref_counts.is_empty() {
        return Err(EvalError::DegenerateInput(n));
    }
    let cand_counts = ngram_counts(candidate, n);
    let ref_total: usize = ref_counts.values().sum();
    let cand_total: usize = cand_counts.values().sum();
    let overlap: usize = cand_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let recall = overlap as f64 / ref_total as f64;
    let precision = if cand_total == 0 {
        0.0
    } else {
        overlap as f64 / cand_total as f64
    };
    Ok(Components::from_rp(recall, precision))
}

/// Length of the longest common subsequence.
pub fn lcs_length(a: &[TokenId], b: &[TokenId]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// LCS-based scores: recall = LCS/|reference|, precision = LCS/|candidate|.
pub fn rouge_l(candidate: &[TokenId], reference: &[TokenId]) -> Result<Components, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::DegenerateInput(1));
    }
    let l = lcs_length(candidate, reference) as f64;
    let recall = l / reference.len() as f64;
    let precision = if candidate.is_empty() {
        0.0
    } else {
        l / candidate.len() as f64
    };
    Ok(Components::from_rp(recall, precision))
}

/// All three metrics for one candidate/reference pair. The reference must
/// be non-empty; a reference too short for bigrams yields zero ROUGE-2
/// flagged via [`pair_scores`]'s per-metric aggregation instead.
pub fn pair_scores(candidate: &[TokenId], reference: &[TokenId]) -> Result<RougeScores, EvalError> {
    Ok(RougeScores {
        rouge1: rouge_n(candidate, reference, 1)?,
        rouge2: rouge_n(candidate, reference, 2).unwrap_or_default(),
        rouge_l: rouge_l(candidate, reference)?,
    })
}

/// Arithmetic mean of per-pair scores. Pairs whose reference is degenerate
/// for a metric are excluded from that metric's mean, so a corpus of
/// one-token references still reports ROUGE-1/L.
pub fn corpus_score<'a, I>(pairs: I) -> Result<RougeScores, EvalError>
where
    I: IntoIterator<Item = (&'a [TokenId], &'a [TokenId])>,
{
    let mut sums = RougeScores::default();
    let mut n1 = 0usize;
    let mut n2 = 0usize;
    let mut nl = 0usize;
    for (candidate, reference) in pairs {
        if let Ok(c) = rouge_n(candidate, reference, 1) {
            accumulate(&mut sums.rouge1, &c);
            n1 += 1;
        }
        if let Ok(c) = rouge_n(candidate, reference, 2) {
            accumulate(&mut sums.rouge2, &c);
            n2 += 1;
        }
        if let Ok(c) = rouge_l(candidate, reference) {
            accumulate(&mut sums.rouge_l, &c);
            nl += 1;
        }
    }
    if n1 == 0 && n2 == 0 && nl == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    divide(&mut sums.rouge1, n1);
    divide(&mut sums.rouge2, n2);
    divide(&mut sums.rouge_l, nl);
    Ok(sums)
}

fn accumulate(into: &mut Components, c: &Components) {
    into.recall += c.recall;
    into.precision += c.precision;
    into.f1 += c.f1;
}

fn divide(c: &mut Components, n: usize) {
    if n > 0 {
        c.recall /= n as f64;
        c.precision /= n as f64;
        c.f1 /= n as f64;
    }
}
