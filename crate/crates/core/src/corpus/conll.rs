//! Two-column CoNLL-style token/tag files.

use std::collections::BTreeSet;
use std::path::Path;

use super::{fnv1a, CorpusError};

/// Token-classification corpus: sentences of (token, tag) pairs.
#[derive(Debug, Clone)]
pub struct TaggedCorpus {
    pub language: String,
    pub sentences: Vec<Vec<(String, String)>>,
    pub tag_set: BTreeSet<String>,
}

impl TaggedCorpus {
    pub fn new(language: String, sentences: Vec<Vec<(String, String)>>) -> Self {
        let tag_set =
            sentences.iter().flatten().map(|(_, t)| t.clone()).collect();
        Self { language, sentences, tag_set }
    }

    /// Deterministic train/test partition by seeded sentence hash
    /// (roughly `test_percent`% of sentences go to test).
    pub fn split(&self, test_percent: u64, seed: u64) -> (Self, Self) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for sent in &self.sentences {
            let mut h = fnv1a(super::FNV_OFFSET, &seed.to_le_bytes());
            for (tok, tag) in sent {
                h = fnv1a(h, tok.as_bytes());
                h = fnv1a(h, tag.as_bytes());
            }
            if h % 100 < test_percent {
                test.push(sent.clone());
            } else {
                train.push(sent.clone());
            }
        }
        (
            Self::new(self.language.clone(), train),
            Self::new(self.language.clone(), test),
        )
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Serialize in the two-column format read by [`load_conll`].
    pub fn to_conll(&self) -> String {
        let mut out = String::new();
        for sent in &self.sentences {
            for (tok, tag) in sent {
                out.push_str(tok);
                out.push('\t');
                out.push_str(tag);
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Parse a blank-line-separated two-column (token, tag) file.
pub fn load_conll(path: &Path, language: &str) -> Result<TaggedCorpus, CorpusError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let mut sentences = Vec::new();
    let mut current: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(CorpusError::RaggedRow {
                path: path.display().to_string(),
                line: lineno + 1,
                cols: cols.len(),
            });
        }
        current.push((cols[0].to_string(), cols[1].to_string()));
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    if sentences.is_empty() {
        return Err(CorpusError::EmptyTagged { path: path.display().to_string() });
    }
    Ok(TaggedCorpus::new(language.to_string(), sentences))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_sentences_and_collects_tags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.conll");
        std::fs::write(&p, "dog\tN\nruns\tV\n\ncat\tN\n").unwrap();
        let c = load_conll(&p, "en").unwrap();
        assert_eq!(c.sentences.len(), 2);
        assert_eq!(c.tag_set.iter().cloned().collect::<Vec<_>>(), ["N", "V"]);
    }

    #[test]
    fn blank_line_at_eof_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.conll");
        std::fs::write(&p, "a\tN\n\n\n").unwrap();
        assert_eq!(load_conll(&p, "en").unwrap().sentences.len(), 1);
    }

    #[test]
    fn empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.conll");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_conll(&p, "en"), Err(CorpusError::EmptyTagged { .. })));
    }

    #[test]
    fn ragged_row_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.conll");
        std::fs::write(&p, "a\tN\nbroken\n").unwrap();
        let err = load_conll(&p, "en").unwrap_err();
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn conll_roundtrip() {
        let c = TaggedCorpus::new(
            "x".into(),
            vec![vec![("a".into(), "T0".into()), ("b".into(), "T1".into())]],
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.conll");
        std::fs::write(&p, c.to_conll()).unwrap();
        let back = load_conll(&p, "x").unwrap();
        assert_eq!(back.sentences, c.sentences);
    }
}
