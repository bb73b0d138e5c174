//! Shared multilingual WordPiece vocabulary: normalization, training,
//! greedy longest-match encoding and decoding.
//!
//! Vocab file format follows the BERT `vocab.txt` convention: one token per
//! line, the line number is the id, specials occupy ids 0..=4.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;
use unicode_normalization::{char::is_combining_mark, UnicodeNormalization};

use crate::corpus::CorpusSet;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
pub const CONTINUATION: &str = "##";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("target size {target} is below the minimum {min} (alphabet + specials)")]
    TargetTooSmall { target: usize, min: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("vocab file {path}: {reason}")]
    BadVocabFile { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corpus has {corpus} languages but {cfgs} normalizer configs were given")]
    ConfigMismatch { corpus: usize, cfgs: usize },
}

/// Text normalization switches. `strip_accents` is decided per language
/// (everything except Korean in the reference setup).
#[derive(Debug, Clone, Copy)]
pub struct NormalizerConfig {
    pub lowercase: bool,
    pub strip_accents: bool,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self { lowercase: true, strip_accents: true }
    }
}

/// Optional accent stripping (canonical decomposition, combining marks
/// removed), optional lowercasing, whitespace collapsed to single spaces.
/// Text stays composed when accents are kept, so Hangul survives intact.
/// Idempotent.
pub fn normalize(text: &str, cfg: &NormalizerConfig) -> String {
    let decomposed: String = if cfg.strip_accents {
        text.nfd().filter(|ch| !is_combining_mark(*ch)).collect()
    } else {
        text.to_string()
    };
    let cased = if cfg.lowercase { decomposed.to_lowercase() } else { decomposed };
    cased.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Shared WordPiece vocabulary; ids are dense `0..len`.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let lookup = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, lookup }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < SPECIALS.len() as u32
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let body = self.tokens.join("\n") + "\n";
        std::fs::write(path, body)
            .map_err(|source| TokenizerError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let body = std::fs::read_to_string(path)
            .map_err(|source| TokenizerError::Io { path: path.display().to_string(), source })?;
        let tokens: Vec<String> = body.lines().map(str::to_owned).collect();
        for (i, want) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*want) {
                return Err(TokenizerError::BadVocabFile {
                    path: path.display().to_string(),
                    reason: format!("special token {want} missing at id {i}"),
                });
            }
        }
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = seen.insert(t.clone(), i) {
                return Err(TokenizerError::BadVocabFile {
                    path: path.display().to_string(),
                    reason: format!("duplicate token {t:?} at lines {prev} and {i}"),
                });
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Split a normalized word into its character symbols: first char bare,
/// the rest carrying the `##` continuation marker.
fn word_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, ch)| if i == 0 { ch.to_string() } else { format!("{CONTINUATION}{ch}") })
        .collect()
}

fn strip_continuation(sym: &str) -> &str {
    sym.strip_prefix(CONTINUATION).unwrap_or(sym)
}

/// Train a WordPiece vocabulary by repeated likelihood-ratio pair merges:
/// the adjacent pair `(x, y)` maximizing `count(xy) / (count(x)*count(y))`
/// is merged, ties broken by lexicographically smallest merged string,
/// until the target size is reached or no pair remains.
pub fn train_wordpiece(
    corpora: &CorpusSet,
    target_size: usize,
    cfgs: &[NormalizerConfig],
) -> Result<Vocab, TokenizerError> {
    if corpora.languages().is_empty() || corpora.total_sentences() == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    if cfgs.len() != corpora.languages().len() {
        return Err(TokenizerError::ConfigMismatch {
            corpus: corpora.languages().len(),
            cfgs: cfgs.len(),
        });
    }

    // Word frequencies over all languages, each normalized by its own config.
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for (lang_idx, sentences) in corpora.sentences().iter().enumerate() {
        for sentence in sentences {
            for word in normalize(sentence, &cfgs[lang_idx]).split(' ') {
                if !word.is_empty() {
                    *word_freq.entry(word.to_string()).or_insert(0) += 1;
                }
            }
        }
    }
    if word_freq.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut words: Vec<(Vec<String>, u64)> =
        word_freq.into_iter().map(|(w, f)| (word_symbols(&w), f)).collect();

    let mut alphabet: Vec<String> =
        words.iter().flat_map(|(syms, _)| syms.iter().cloned()).collect();
    alphabet.sort();
    alphabet.dedup();

    let min = SPECIALS.len() + alphabet.len();
    if target_size < min {
        return Err(TokenizerError::TargetTooSmall { target: target_size, min });
    }

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet);

    while tokens.len() < target_size {
        let mut sym_count: BTreeMap<&str, u64> = BTreeMap::new();
        let mut pair_count: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (syms, freq) in &words {
            for s in syms {
                *sym_count.entry(s).or_insert(0) += freq;
            }
            for pair in syms.windows(2) {
                *pair_count.entry((&pair[0], &pair[1])).or_insert(0) += freq;
            }
        }
        if pair_count.is_empty() {
            break;
        }

        let mut best: Option<(f64, String, (String, String))> = None;
        for (&(x, y), &cnt) in &pair_count {
            let score = cnt as f64 / (sym_count[x] as f64 * sym_count[y] as f64);
            let merged = format!("{x}{}", strip_continuation(y));
            let better = match &best {
                None => true,
                Some((bs, bm, _)) => score > *bs || (score == *bs && merged < *bm),
            };
            if better {
                best = Some((score, merged, (x.to_string(), y.to_string())));
            }
        }
        let (_, merged, (x, y)) = best.expect("non-empty pair set");

        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == x && syms[i + 1] == y {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                } else {
                    i += 1;
                }
            }
        }
        // The same surface form can emerge from two different pairs.
        if !tokens.contains(&merged) {
            tokens.push(merged);
        }
    }

    Ok(Vocab::from_tokens(tokens))
}

/// Greedy longest-match-first WordPiece segmentation of one normalized word.
/// Returns `None` when some remainder cannot be matched ([UNK] fallback).
fn segment_word(word: &str, vocab: &Vocab) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut matched = None;
        for end in (start + 1..=chars.len()).rev() {
            let slice: String = chars[start..end].iter().collect();
            let candidate =
                if start == 0 { slice } else { format!("{CONTINUATION}{slice}") };
            if let Some(id) = vocab.id(&candidate) {
                matched = Some((id, end));
                break;
            }
        }
        match matched {
            Some((id, end)) => {
                pieces.push(id);
                start = end;
            }
            None => return None,
        }
    }
    Some(pieces)
}

/// Normalize, segment, and frame a sentence as `[CLS] pieces [SEP]`,
/// truncated to `max_len` with `[SEP]` kept last.
pub fn encode(text: &str, vocab: &Vocab, cfg: &NormalizerConfig, max_len: usize) -> Vec<u32> {
    debug_assert!(max_len >= 3);
    let mut ids = vec![CLS_ID];
    for word in normalize(text, cfg).split(' ') {
        if word.is_empty() {
            continue;
        }
        match segment_word(word, vocab) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(UNK_ID),
        }
    }
    ids.push(SEP_ID);
    if ids.len() > max_len {
        ids.truncate(max_len - 1);
        ids.push(SEP_ID);
    }
    ids
}

/// Drop specials, glue `##` continuations, join words with single spaces.
pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<String, TokenizerError> {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        let token = vocab
            .token(id)
            .ok_or(TokenizerError::IdOutOfRange { id, size: vocab.len() })?;
        if vocab.is_special(id) {
            continue;
        }
        match token.strip_prefix(CONTINUATION) {
            Some(rest) if !words.is_empty() => words.last_mut().unwrap().push_str(rest),
            Some(rest) => words.push(rest.to_string()),
            None => words.push(token.to_string()),
        }
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusSet;

    fn cfg() -> NormalizerConfig {
        NormalizerConfig::default()
    }

    fn corpus_of(words: &[(&str, usize)]) -> CorpusSet {
        let mut sentences = Vec::new();
        for &(w, n) in words {
            for _ in 0..n {
                sentences.push(w.to_string());
            }
        }
        CorpusSet::from_sentences(vec!["x".into()], vec![sentences]).unwrap()
    }

    #[test]
    fn normalize_strips_accents_and_cases() {
        assert_eq!(normalize("Café", &cfg()), "cafe");
        let keep = NormalizerConfig { lowercase: true, strip_accents: false };
        assert_eq!(normalize("한국", &keep), "한국");
        assert_eq!(normalize("  a \t b\n", &cfg()), "a b");
    }

    #[test]
    fn normalize_idempotent() {
        for s in ["Café au lait", "ÅÄÖ 한국", "  spaced   out  "] {
            let once = normalize(s, &cfg());
            assert_eq!(normalize(&once, &cfg()), once);
        }
    }

    #[test]
    fn wordpiece_merge_scores_from_spec_corpus() {
        // corpus {"aa"x4, "ab"x1, "ba"x3}: pair scores are
        // (a,##a)=4/(5*7), (a,##b)=1/(5*1), (b,##a)=3/(3*7); winner merges to "ab".
        let corpus = corpus_of(&[("aa", 4), ("ab", 1), ("ba", 3)]);
        // alphabet: a, b, ##a, ##b -> 4 symbols; allow exactly one merge.
        let vocab = train_wordpiece(&corpus, 5 + 4 + 1, &[cfg()]).unwrap();
        assert_eq!(vocab.len(), 10);
        assert!(vocab.id("ab").is_some());
        assert!(vocab.id("aa").is_none());
    }

    #[test]
    fn wordpiece_no_merge_possible() {
        let corpus = corpus_of(&[("a", 3)]);
        let vocab = train_wordpiece(&corpus, 5 + 2, &[cfg()]).unwrap();
        // specials + "a"; budget of one extra slot but nothing to merge.
        assert_eq!(vocab.tokens().len(), 6);
        assert_eq!(vocab.token(5), Some("a"));
    }

    #[test]
    fn wordpiece_rejects_bad_inputs() {
        let empty = CorpusSet::from_sentences(vec![], vec![]).unwrap();
        assert!(matches!(train_wordpiece(&empty, 100, &[]), Err(TokenizerError::EmptyCorpus)));
        let corpus = corpus_of(&[("abc", 1)]);
        assert!(matches!(
            train_wordpiece(&corpus, 6, &[cfg()]),
            Err(TokenizerError::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn learned_tokens_decompose_into_vocab_pieces() {
        let corpus = corpus_of(&[("abab", 5), ("abc", 3), ("cab", 2)]);
        let vocab = train_wordpiece(&corpus, 30, &[cfg()]).unwrap();
        for token in vocab.tokens().iter().skip(SPECIALS.len()) {
            if token.starts_with(CONTINUATION) {
                continue; // continuation pieces are not standalone words
            }
            let pieces = segment_word(token, &vocab);
            assert_eq!(
                pieces,
                Some(vec![vocab.id(token).unwrap()]),
                "word-initial token {token:?} should segment to itself"
            );
        }
    }

    fn toy_vocab() -> Vocab {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for t in ["a", "b", "##a", "##b"] {
            tokens.push(t.into());
        }
        Vocab::from_tokens(tokens)
    }

    #[test]
    fn encode_greedy_longest_match() {
        let vocab = toy_vocab();
        let ids = encode("ab", &vocab, &cfg(), 16);
        let toks: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap()).collect();
        assert_eq!(toks, ["[CLS]", "a", "##b", "[SEP]"]);
    }

    #[test]
    fn encode_unknown_word_is_single_unk() {
        let vocab = toy_vocab();
        let ids = encode("q", &vocab, &cfg(), 16);
        assert_eq!(ids, vec![CLS_ID, UNK_ID, SEP_ID]);
    }

    #[test]
    fn encode_empty_is_cls_sep() {
        let vocab = toy_vocab();
        assert_eq!(encode("", &vocab, &cfg(), 16), vec![CLS_ID, SEP_ID]);
    }

    #[test]
    fn encode_truncates_keeping_sep() {
        let vocab = toy_vocab();
        let ids = encode("ab ab ab ab", &vocab, &cfg(), 5);
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(*ids.last().unwrap(), SEP_ID);
    }

    #[test]
    fn decode_glues_continuations() {
        let vocab = toy_vocab();
        let ids: Vec<u32> =
            ["a", "##b", "b"].iter().map(|t| vocab.id(t).unwrap()).collect();
        assert_eq!(decode(&ids, &vocab).unwrap(), "ab b");
        assert_eq!(decode(&[CLS_ID, SEP_ID], &vocab).unwrap(), "");
        assert!(decode(&[99], &vocab).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let vocab = toy_vocab();
        let text = "ab a ba";
        let ids = encode(text, &vocab, &cfg(), 64);
        assert_eq!(decode(&ids, &vocab).unwrap(), text);
    }

    #[test]
    fn vocab_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = toy_vocab();
        vocab.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.tokens(), vocab.tokens());
    }
}
