//! Tokenization, text preprocessing, and token↔id dictionaries.
//!
//! Two dictionaries exist in a typical run: the source-side vocabulary (over
//! characters or pronunciation units) and the target-side vocabulary (always
//! characters). Both reserve five special tokens at fixed ids.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Token id inside one [`Vocabulary`].
pub type TokenId = usize;

/// A sequence of token ids over one vocabulary. Source sequences never
/// contain BOS/EOS; training targets get EOS appended by the batcher.
pub type TokenSeq = Vec<TokenId>;

/// The five reserved tokens, in file order. Their ids are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Special {
    Bos = 0,
    Eos = 1,
    Unk = 2,
    Num = 3,
    Pad = 4,
}

impl Special {
    pub const COUNT: usize = 5;

    pub fn id(self) -> TokenId {
        self as TokenId
    }

    /// Surface form written to vocabulary files. NUM's surface is `#`, the
    /// symbol digits are rewritten to, so `#` encodes to the NUM id.
    pub fn surface(self) -> &'static str {
        match self {
            Special::Bos => "<s>",
            Special::Eos => "</s>",
            Special::Unk => "<unk>",
            Special::Num => "#",
            Special::Pad => "<pad>",
        }
    }

    pub fn all() -> [Special; Self::COUNT] {
        [
            Special::Bos,
            Special::Eos,
            Special::Unk,
            Special::Num,
            Special::Pad,
        ]
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("character {0:?} has no lexicon entry and no unknown-unit is configured")]
    MissingLexiconEntry(String),
    #[error("lexicon unit {0:?} collides with a reserved structural token")]
    ReservedUnit(String),
    #[error("token {0:?} contains a line break and cannot be written to a vocabulary file")]
    UnserializableToken(String),
    #[error("vocabulary file is malformed: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bijective token↔id map with the five specials at ids 0..=4.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an iterator of token sequences, keeping
    /// tokens whose corpus count is at least `min_count`. Ordering is
    /// deterministic: count descending, then byte-lexicographic.
    pub fn build<I, S>(corpus: I, min_count: usize) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = String>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for seq in corpus {
            for tok in seq {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_count && !is_special_surface(tok))
            .collect();
        kept.sort_by(|(ta, na), (tb, nb)| nb.cmp(na).then_with(|| ta.cmp(tb)));
        Vocabulary::from_content_tokens(kept.into_iter().map(|(t, _)| t))
    }

    /// A vocabulary holding exactly the specials plus the given content
    /// tokens, in the given order. Duplicates and special surfaces are skipped.
    pub fn from_content_tokens<I: IntoIterator<Item = String>>(content: I) -> Vocabulary {
        let mut tokens: Vec<String> = Special::all()
            .iter()
            .map(|s| s.surface().to_string())
            .collect();
        let mut ids: HashMap<String, TokenId> =
            tokens.iter().cloned().zip(0..).collect();
        for tok in content {
            if !ids.contains_key(&tok) {
                ids.insert(tok.clone(), tokens.len());
                tokens.push(tok);
            }
        }
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds the specials
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id < Special::COUNT
    }

    /// Encodes token strings; out-of-vocabulary tokens map to UNK.
    pub fn encode(&self, tokens: &[String]) -> TokenSeq {
        tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(Special::Unk.id()))
            .collect()
    }

    /// Inverse of [`encode`](Self::encode) for valid ids.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.tokens.get(i).cloned().unwrap_or_else(|| Special::Unk.surface().into()))
            .collect()
    }

    /// Fraction of UNK ids in a sequence; 0 for an empty sequence.
    pub fn unk_fraction(&self, ids: &[TokenId]) -> f64 {
        if ids.is_empty() {
            return 0.0;
        }
        let unk = ids.iter().filter(|&&i| i == Special::Unk.id()).count();
        unk as f64 / ids.len() as f64
    }

    /// Canonical file serialization: one token per line, line number = id.
    pub fn to_file_string(&self) -> Result<String, VocabError> {
        let mut out = String::new();
        for tok in &self.tokens {
            if tok.contains('\n') || tok.contains('\r') {
                return Err(VocabError::UnserializableToken(tok.clone()));
            }
            out.push_str(tok);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<(), VocabError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_file_string()?.as_bytes())?;
        Ok(())
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Vocabulary, VocabError> {
        let f = fs::File::open(path)?;
        let mut lines = Vec::new();
        for line in BufReader::new(f).lines() {
            lines.push(line?);
        }
        Self::from_file_lines(lines)
    }

    fn from_file_lines(lines: Vec<String>) -> Result<Vocabulary, VocabError> {
        if lines.len() < Special::COUNT {
            return Err(VocabError::MalformedFile(
                "fewer lines than the five reserved tokens".into(),
            ));
        }
        for (i, s) in Special::all().iter().enumerate() {
            if lines[i] != s.surface() {
                return Err(VocabError::MalformedFile(format!(
                    "line {i} must be {:?}, found {:?}",
                    s.surface(),
                    lines[i]
                )));
            }
        }
        let mut ids = HashMap::new();
        for (i, tok) in lines.iter().enumerate() {
            if ids.insert(tok.clone(), i).is_some() {
                return Err(VocabError::MalformedFile(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens: lines, ids })
    }

    /// SHA-256 of the canonical file serialization, hex-encoded. Embedded in
    /// confusion-matrix files and checkpoints to catch dictionary mismatches.
    pub fn checksum(&self) -> String {
        let text = self
            .to_file_string()
            .unwrap_or_else(|_| self.tokens.join("\u{0}"));
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn is_special_surface(tok: &str) -> bool {
    Special::all().iter().any(|s| s.surface() == tok)
}

/// Replaces every Arabic digit with the NUM surface symbol `#`. The output
/// has the same character count as the input.
pub fn preprocess(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_digit() { '#' } else { c })
        .collect()
}

/// Splits text into single-character tokens, skipping whitespace.
pub fn tokenize_chars(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(String::from)
        .collect()
}

/// Character → pronunciation-unit table (e.g. Mandarin Initial/Final pairs).
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
    /// Unit substituted for characters absent from the table, if configured.
    pub unknown_unit: Option<String>,
}

impl Lexicon {
    pub fn new() -> Lexicon {
        Lexicon::default()
    }

    pub fn insert(&mut self, ch: impl Into<String>, units: Vec<String>) -> Result<(), VocabError> {
        for u in &units {
            if matches!(u.as_str(), "<s>" | "</s>" | "<pad>" | "<unk>") {
                return Err(VocabError::ReservedUnit(u.clone()));
            }
        }
        self.entries.insert(ch.into(), units);
        Ok(())
    }

    pub fn get(&self, ch: &str) -> Option<&[String]> {
        self.entries.get(ch).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Converts a character-token sequence to the concatenation of each
    /// character's unit list, in order.
    pub fn to_pronunciation(&self, chars: &[String]) -> Result<Vec<String>, VocabError> {
        let mut out = Vec::with_capacity(chars.len() * 2);
        for ch in chars {
            match self.entries.get(ch) {
                Some(units) => out.extend(units.iter().cloned()),
                None => match &self.unknown_unit {
                    Some(u) => out.push(u.clone()),
                    None => return Err(VocabError::MissingLexiconEntry(ch.clone())),
                },
            }
        }
        Ok(out)
    }

    /// TSV format: `char<TAB>unit1 unit2 …`, one character per line.
    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Lexicon, VocabError> {
        let f = fs::File::open(path)?;
        let mut lex = Lexicon::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (ch, units) = line.split_once('\t').ok_or_else(|| {
                VocabError::MalformedFile(format!("lexicon line {} lacks a tab", lineno + 1))
            })?;
            let units: Vec<String> = units.split_whitespace().map(String::from).collect();
            if units.is_empty() {
                return Err(VocabError::MalformedFile(format!(
                    "lexicon line {} has no units",
                    lineno + 1
                )));
            }
            lex.insert(ch, units)?;
        }
        Ok(lex)
    }
}

/// The tokenization unit of the source side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Char,
    Pronunciation,
}

impl Unit {
    /// Preprocesses and tokenizes raw text according to the unit.
    pub fn tokenize(self, text: &str, lexicon: Option<&Lexicon>) -> Result<Vec<String>, VocabError> {
        let chars = tokenize_chars(&preprocess(text));
        match self {
            Unit::Char => Ok(chars),
            Unit::Pronunciation => {
                let lex = lexicon.ok_or_else(|| {
                    VocabError::MalformedFile("pronunciation unit requires a lexicon".into())
                })?;
                lex.to_pronunciation(&chars)
            }
        }
    }

    /// Joins tokens back into display text: characters concatenate,
    /// pronunciation units are space-separated.
    pub fn render(self, tokens: &[String]) -> String {
        match self {
            Unit::Char => tokens.concat(),
            Unit::Pronunciation => tokens.join(" "),
        }
    }
}

impl std::str::FromStr for Unit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(Unit::Char),
            "pronunciation" => Ok(Unit::Pronunciation),
            other => Err(format!("unknown unit {other:?} (expected char|pronunciation)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seqs(words: &[&str]) -> Vec<Vec<String>> {
        words.iter().map(|w| tokenize_chars(w)).collect()
    }

    #[test]
    fn build_filters_by_min_count() {
        // counts {a:6, b:4}, min_count 5 -> specials + {a}
        let corpus = seqs(&["aaaaaa", "bbbb"]);
        let v = Vocabulary::build(corpus, 5);
        assert_eq!(v.len(), Special::COUNT + 1);
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.id_of("b"), None);
    }

    #[test]
    fn build_empty_corpus_is_specials_only() {
        let v = Vocabulary::build(Vec::<Vec<String>>::new(), 5);
        assert_eq!(v.len(), Special::COUNT);
        for s in Special::all() {
            assert_eq!(v.id_of(s.surface()), Some(s.id()));
        }
    }

    #[test]
    fn build_keeps_count_equal_to_min_count() {
        let corpus = seqs(&["aaaaa"]);
        let v = Vocabulary::build(corpus, 5);
        assert!(v.id_of("a").is_some());
    }

    #[test]
    fn build_orders_by_count_then_token() {
        let corpus = seqs(&["bb", "aa", "ccc"]);
        let v = Vocabulary::build(corpus, 1);
        assert_eq!(v.token(5), Some("c")); // count 3
        assert_eq!(v.token(6), Some("a")); // count 2, a < b
        assert_eq!(v.token(7), Some("b"));
    }

    #[test]
    fn preprocess_replaces_digits() {
        assert_eq!(preprocess("a1b2"), "a#b#");
        assert_eq!(preprocess(""), "");
        assert_eq!(preprocess("abc"), "abc");
    }

    #[test]
    fn encode_maps_oov_to_unk() {
        let v = Vocabulary::build(seqs(&["aaaaa"]), 5);
        let ids = v.encode(&["a".into(), "z".into()]);
        assert_eq!(ids, vec![v.id_of("a").unwrap(), Special::Unk.id()]);
        assert_eq!(v.encode(&[]), Vec::<TokenId>::new());
        let a = v.id_of("a").unwrap();
        assert_eq!(v.encode(&["a".into(), "a".into()]), vec![a, a]);
    }

    #[test]
    fn hash_symbol_encodes_to_num() {
        let v = Vocabulary::build(Vec::<Vec<String>>::new(), 1);
        assert_eq!(v.encode(&["#".into()]), vec![Special::Num.id()]);
    }

    #[test]
    fn lexicon_lookup() {
        let mut lex = Lexicon::new();
        lex.insert("da", vec!["d".into(), "a".into()]).unwrap();
        let out = lex.to_pronunciation(&["da".into()]).unwrap();
        assert_eq!(out, vec!["d", "a"]);
        assert_eq!(lex.to_pronunciation(&[]).unwrap(), Vec::<String>::new());

        let mut single = Lexicon::new();
        single.insert("a", vec!["a".into()]).unwrap();
        let out = single.to_pronunciation(&["a".into(), "a".into()]).unwrap();
        assert_eq!(out, vec!["a", "a"]);
    }

    #[test]
    fn lexicon_missing_entry_errors() {
        let lex = Lexicon::new();
        let err = lex.to_pronunciation(&["x".into()]).unwrap_err();
        assert!(matches!(err, VocabError::MissingLexiconEntry(_)));

        let mut fallback = Lexicon::new();
        fallback.unknown_unit = Some("<unk>".into());
        // unknown_unit maps straight to UNK at encode time
        assert_eq!(fallback.to_pronunciation(&["x".into()]).unwrap(), vec!["<unk>"]);
    }

    #[test]
    fn lexicon_rejects_reserved_units() {
        let mut lex = Lexicon::new();
        assert!(lex.insert("a", vec!["<s>".into()]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(seqs(&["abcabc"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vocab");
        v.write_file(&path).unwrap();
        let back = Vocabulary::read_file(&path).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.checksum(), back.checksum());
    }

    #[test]
    fn file_rejects_bad_special_order() {
        let lines = vec!["<s>".into(), "<unk>".into(), "</s>".into(), "#".into(), "<pad>".into()];
        assert!(Vocabulary::from_file_lines(lines).is_err());
    }

    proptest! {
        #[test]
        fn decode_encode_round_trip(ids in proptest::collection::vec(0usize..8, 0..20)) {
            let v = Vocabulary::from_content_tokens(["a", "b", "c"].map(String::from));
            // ids without UNK survive decode->encode
            let ids: Vec<usize> = ids.into_iter().filter(|&i| i != Special::Unk.id() && i < v.len()).collect();
            let toks = v.decode(&ids);
            prop_assert_eq!(v.encode(&toks), ids);
        }

        #[test]
        fn build_is_stream_order_invariant(mut words in proptest::collection::vec("[a-d]{1,6}", 0..12)) {
            let v1 = Vocabulary::build(seqs(&words.iter().map(String::as_str).collect::<Vec<_>>()), 2);
            words.reverse();
            let v2 = Vocabulary::build(seqs(&words.iter().map(String::as_str).collect::<Vec<_>>()), 2);
            prop_assert_eq!(v1, v2);
        }

        #[test]
        fn preprocess_preserves_char_count(s in ".{0,40}") {
            prop_assert_eq!(preprocess(&s).chars().count(), s.chars().count());
        }
    }
}
