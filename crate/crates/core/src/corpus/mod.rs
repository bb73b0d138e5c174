//! Per-language sentence corpora: loading, character-count balancing,
//! deterministic dev/test splits, batch construction, and CoNLL ingestion.

mod conll;
mod synthetic;

pub use conll::{load_conll, TaggedCorpus};
pub use synthetic::{gen_synthetic, SyntheticLangSpec};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::losses::{MaskedBatch, MaskingConfig};
use crate::tokenizer::{encode, NormalizerConfig, Vocab};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("file {path} is not valid UTF-8")]
    InvalidUtf8 { path: String },
    #[error("language `{lang}` has no sentences")]
    EmptyLanguage { lang: String },
    #[error("duplicate language id `{lang}`")]
    DuplicateLanguage { lang: String },
    #[error("language list and sentence lists differ in length ({langs} vs {lists})")]
    LengthMismatch { langs: usize, lists: usize },
    #[error("{path}:{line}: expected two tab- or space-separated columns, got {cols}")]
    RaggedRow { path: String, line: usize, cols: usize },
    #[error("{path}: no sentences found")]
    EmptyTagged { path: String },
    #[error("synthetic spec `{name}`: {reason}")]
    BadSpec { name: String, reason: String },
}

/// Ordered per-language sentence collections with character counts.
#[derive(Debug, Clone)]
pub struct CorpusSet {
    languages: Vec<String>,
    sentences: Vec<Vec<String>>,
}

impl CorpusSet {
    pub fn from_sentences(
        languages: Vec<String>,
        sentences: Vec<Vec<String>>,
    ) -> Result<Self, CorpusError> {
        if languages.len() != sentences.len() {
            return Err(CorpusError::LengthMismatch {
                langs: languages.len(),
                lists: sentences.len(),
            });
        }
        for (i, l) in languages.iter().enumerate() {
            if languages[..i].contains(l) {
                return Err(CorpusError::DuplicateLanguage { lang: l.clone() });
            }
        }
        Ok(Self { languages, sentences })
    }

    /// Load one UTF-8 file per language, one sentence per line, empty lines
    /// dropped. Listed order is preserved.
    pub fn load(entries: &[(String, std::path::PathBuf)]) -> Result<Self, CorpusError> {
        let mut languages = Vec::new();
        let mut sentences = Vec::new();
        for (lang, path) in entries {
            let bytes = std::fs::read(path)
                .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
            let text = String::from_utf8(bytes)
                .map_err(|_| CorpusError::InvalidUtf8 { path: path.display().to_string() })?;
            let lines: Vec<String> =
                text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect();
            if lines.is_empty() {
                return Err(CorpusError::EmptyLanguage { lang: lang.clone() });
            }
            languages.push(lang.clone());
            sentences.push(lines);
        }
        Self::from_sentences(languages, sentences)
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn lang_sentences(&self, lang_idx: usize) -> &[String] {
        &self.sentences[lang_idx]
    }

    /// Character count (Unicode scalar values) of one language.
    pub fn char_count(&self, lang_idx: usize) -> usize {
        self.sentences[lang_idx].iter().map(|s| s.chars().count()).sum()
    }

    pub fn char_counts(&self) -> Vec<usize> {
        (0..self.languages.len()).map(|i| self.char_count(i)).collect()
    }

    pub fn total_sentences(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// FNV-1a content hash over languages and sentences; used in manifests.
    pub fn content_hash(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for (lang, sents) in self.languages.iter().zip(&self.sentences) {
            h = fnv1a(h, lang.as_bytes());
            for s in sents {
                h = fnv1a(h, s.as_bytes());
                h = fnv1a(h, b"\n");
            }
        }
        h
    }

    /// Balance by truncation to the smallest language's character count `m`.
    ///
    /// Each oversized language is shuffled and filled first-fit with
    /// sentences up to a budget of `m` characters. A language already within
    /// one (globally) longest sentence of `m` passes through untouched, and
    /// truncation repeats until no language changes, which makes the
    /// operation exactly idempotent even for sentence lengths comparable to
    /// `m`. A language is never emptied: if even its shortest sentence
    /// overshoots the budget, that single sentence is kept. For realistic
    /// corpora (sentences much shorter than `m`) a single pass suffices and
    /// the minimum language is always complete.
    pub fn balance<R: Rng>(&self, rng: &mut R) -> Result<Self, CorpusError> {
        for (i, lang) in self.languages.iter().enumerate() {
            if self.sentences[i].is_empty() {
                return Err(CorpusError::EmptyLanguage { lang: lang.clone() });
            }
        }
        let mut current = self.sentences.clone();
        loop {
            // Recomputed each pass: truncation can drop the globally longest
            // sentence, and the pass-through slack must match what a fresh
            // call on the output would use, or idempotence breaks.
            let longest = current
                .iter()
                .flatten()
                .map(|s| s.chars().count())
                .max()
                .expect("non-empty corpus");
            let counts: Vec<usize> =
                current.iter().map(|s| s.iter().map(|x| x.chars().count()).sum()).collect();
            let m = *counts.iter().min().expect("non-empty corpus");
            let mut changed = false;
            let mut out = Vec::with_capacity(current.len());
            for (i, sents) in current.iter().enumerate() {
                if counts[i] <= m + longest {
                    out.push(sents.clone());
                    continue;
                }
                let mut shuffled = sents.clone();
                shuffled.shuffle(rng);
                let mut taken = Vec::new();
                let mut total = 0usize;
                for s in shuffled {
                    let len = s.chars().count();
                    if total + len <= m {
                        total += len;
                        taken.push(s);
                    }
                }
                if taken.is_empty() {
                    let shortest = sents
                        .iter()
                        .min_by_key(|s| s.chars().count())
                        .expect("language checked non-empty")
                        .clone();
                    taken.push(shortest);
                }
                changed = true;
                out.push(taken);
            }
            current = out;
            if !changed {
                break;
            }
        }
        Self::from_sentences(self.languages.clone(), current)
    }

    /// Deterministic per-language carve-out by seeded sentence hash:
    /// 5% dev, 5% test, the rest train.
    pub fn split(&self, seed: u64) -> (Self, Self, Self) {
        let mut train = Vec::new();
        let mut dev = Vec::new();
        let mut test = Vec::new();
        for sents in &self.sentences {
            let mut tr = Vec::new();
            let mut dv = Vec::new();
            let mut te = Vec::new();
            for s in sents {
                let h = fnv1a(fnv1a(FNV_OFFSET, &seed.to_le_bytes()), s.as_bytes()) % 100;
                match h {
                    0..=4 => dv.push(s.clone()),
                    5..=9 => te.push(s.clone()),
                    _ => tr.push(s.clone()),
                }
            }
            train.push(tr);
            dev.push(dv);
            test.push(te);
        }
        let mk = |sentences| CorpusSet { languages: self.languages.clone(), sentences };
        (mk(train), mk(dev), mk(test))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub(crate) fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One epoch of monolingual batches in a seeded interleaved order.
///
/// Sentences are shuffled within each language, chunked into single-language
/// batches, and the combined batch list is shuffled again. Sentences that
/// encode to specials only are skipped and counted.
#[allow(clippy::too_many_arguments)]
pub fn make_batches<R: Rng>(
    corpus: &CorpusSet,
    vocab: &Vocab,
    cfgs: &[NormalizerConfig],
    batch_size: usize,
    max_len: usize,
    masking: &MaskingConfig,
    rng: &mut R,
) -> (Vec<MaskedBatch>, usize) {
    let mut batches = Vec::new();
    let mut skipped = 0usize;
    for (lang_idx, sents) in corpus.sentences().iter().enumerate() {
        let mut order: Vec<usize> = (0..sents.len()).collect();
        order.shuffle(rng);
        let mut encoded: Vec<Vec<u32>> = Vec::new();
        for &i in &order {
            let ids = encode(&sents[i], vocab, &cfgs[lang_idx], max_len);
            if ids.iter().all(|&t| vocab.is_special(t)) {
                skipped += 1;
                continue;
            }
            encoded.push(ids);
        }
        for chunk in encoded.chunks(batch_size) {
            match MaskedBatch::build(lang_idx, chunk, masking, vocab.len(), rng) {
                Ok(b) => batches.push(b),
                Err(_) => skipped += chunk.len(),
            }
        }
    }
    batches.shuffle(rng);
    (batches, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn lang(n: usize, len: usize, tag: &str) -> Vec<String> {
        (0..n).map(|i| format!("{tag}{i:03} {}", "x".repeat(len.saturating_sub(5)))).collect()
    }

    #[test]
    fn load_drops_empty_lines_and_counts_chars() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l1.txt");
        std::fs::write(&p, "ab\n\nc\n").unwrap();
        let c = CorpusSet::load(&[("l1".into(), p)]).unwrap();
        assert_eq!(c.lang_sentences(0).len(), 2);
        assert_eq!(c.char_count(0), 3);
    }

    #[test]
    fn load_rejects_empty_and_bad_utf8() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(
            CorpusSet::load(&[("l".into(), p)]),
            Err(CorpusError::EmptyLanguage { .. })
        ));
        let q = dir.path().join("bad.txt");
        std::fs::write(&q, [0xffu8, 0xfe, 0xfd]).unwrap();
        let err = CorpusSet::load(&[("l".into(), q)]).unwrap_err();
        assert!(err.to_string().contains("bad.txt"));
    }

    #[test]
    fn balance_truncates_to_minimum() {
        let c = CorpusSet::from_sentences(
            vec!["hi".into(), "mid".into(), "lo".into()],
            vec![lang(100, 20, "a"), lang(50, 20, "b"), lang(10, 20, "c")],
        )
        .unwrap();
        let m = c.char_count(2);
        let b = c.balance(&mut rng(7)).unwrap();
        let counts = b.char_counts();
        assert!(counts[0] <= m && counts[1] <= m);
        assert_eq!(counts[2], m, "minimum language passes through complete");
        let longest = 20;
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= longest);
    }

    #[test]
    fn balance_is_idempotent_on_char_counts() {
        let c = CorpusSet::from_sentences(
            vec!["hi".into(), "mid".into(), "lo".into()],
            vec![lang(200, 25, "a"), lang(80, 25, "b"), lang(20, 25, "c")],
        )
        .unwrap();
        let once = c.balance(&mut rng(1)).unwrap();
        let twice = once.balance(&mut rng(2)).unwrap();
        assert_eq!(once.char_counts(), twice.char_counts());
    }

    #[test]
    fn balance_equal_sizes_is_identity() {
        let c = CorpusSet::from_sentences(
            vec!["a".into(), "b".into()],
            vec![lang(10, 20, "a"), lang(10, 20, "b")],
        )
        .unwrap();
        let b = c.balance(&mut rng(3)).unwrap();
        assert_eq!(b.char_counts(), c.char_counts());
    }

    #[test]
    fn balance_single_language_is_identity() {
        let c =
            CorpusSet::from_sentences(vec!["a".into()], vec![lang(10, 20, "a")]).unwrap();
        let b = c.balance(&mut rng(4)).unwrap();
        assert_eq!(b.lang_sentences(0), c.lang_sentences(0));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let c = CorpusSet::from_sentences(vec!["a".into()], vec![lang(500, 20, "a")]).unwrap();
        let (tr1, dv1, te1) = c.split(42);
        let (tr2, dv2, te2) = c.split(42);
        assert_eq!(tr1.lang_sentences(0), tr2.lang_sentences(0));
        assert_eq!(dv1.lang_sentences(0), dv2.lang_sentences(0));
        assert_eq!(te1.lang_sentences(0), te2.lang_sentences(0));
        let total = tr1.lang_sentences(0).len() + dv1.lang_sentences(0).len() + te1.lang_sentences(0).len();
        assert_eq!(total, 500);
        assert!(!dv1.lang_sentences(0).is_empty());
        assert!(!te1.lang_sentences(0).is_empty());
    }
}
