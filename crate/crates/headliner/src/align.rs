//! Minimum-edit-distance alignment between reference and hypothesis token
//! sequences. The alignment feeds confusion counting (which token was
//! recognized as which) and error-rate measurement.

use thiserror::Error;

use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("error rate is undefined for an empty reference")]
    EmptyReference,
}

/// One step of an alignment. Positions are 0-based indices into the
/// reference/hypothesis sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Match { ref_pos: usize, hyp_pos: usize },
    Substitute { ref_pos: usize, hyp_pos: usize },
    Insert { hyp_pos: usize },
    Delete { ref_pos: usize },
}

/// A full monotone alignment; every reference and hypothesis position is
/// consumed exactly once, in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub steps: Vec<Step>,
}

impl Alignment {
    /// Unit-cost edit distance realized by this alignment.
    pub fn cost(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| !matches!(s, Step::Match { .. }))
            .count()
    }
}

/// Substitution/insertion/deletion counts from an alignment, plus the
/// derived error rate (may exceed 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditStats {
    pub matches: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn error_rate(&self) -> Result<f64, AlignError> {
        if self.ref_len == 0 {
            return Err(AlignError::EmptyReference);
        }
        Ok((self.substitutions + self.insertions + self.deletions) as f64 / self.ref_len as f64)
    }

    /// Pools counts across utterances for a corpus-level rate.
    pub fn merge(&mut self, other: &EditStats) {
        self.matches += other.matches;
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_len += other.ref_len;
    }
}

/// Aligns `hyp` against `ref` at minimum Levenshtein cost (unit costs for
/// substitute/insert/delete, zero for match) with a full DP table.
///
/// Backtrace ties break deterministically: diagonal, then deletion, then
/// insertion. Preferring the diagonal maximizes the substitution pairs that
/// feed confusion counting.
pub fn levenshtein_align(reference: &[TokenId], hypothesis: &[TokenId]) -> Alignment {
    let m = reference.len();
    let n = hypothesis.len();
    let mut dp = vec![vec![0usize; n + 1]; m + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=n {
        dp[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = dp[i - 1][j] + 1;
            let ins = dp[i][j - 1] + 1;
            dp[i][j] = sub.min(del).min(ins);
        }
    }

    let mut steps = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = dp[i][j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == dp[i - 1][j - 1] + usize::from(!same) {
                steps.push(if same {
                    Step::Match { ref_pos: i - 1, hyp_pos: j - 1 }
                } else {
                    Step::Substitute { ref_pos: i - 1, hyp_pos: j - 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[i - 1][j] + 1 {
            steps.push(Step::Delete { ref_pos: i - 1 });
            i -= 1;
        } else {
            steps.push(Step::Insert { hyp_pos: j - 1 });
            j -= 1;
        }
    }
    steps.reverse();
    Alignment { steps }
}

/// Tallies an alignment into [`EditStats`].
pub fn edit_stats(alignment: &Alignment) -> EditStats {
    let mut s = EditStats::default();
    for step in &alignment.steps {
        match step {
            Step::Match { .. } => s.matches += 1,
            Step::Substitute { .. } => s.substitutions += 1,
            Step::Insert { .. } => s.insertions += 1,
            Step::Delete { .. } => s.deletions += 1,
        }
    }
    s.ref_len = s.matches + s.substitutions + s.deletions;
    s
}
