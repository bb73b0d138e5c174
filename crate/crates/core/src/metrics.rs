//! Evaluation metrics: masked-LM mean reciprocal rank, the balanced
//! multilingual score B, zero-shot transfer Z and its cross-lingual average
//! C_Z, hypothesis checks, and the serializable metrics report.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{make_batches, CorpusSet};
use crate::losses::MaskingConfig;
use crate::model::{ForwardMode, MaskedLmModel, ModelError};
use crate::tokenizer::{NormalizerConfig, Vocab};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no masked positions to rank (empty or all-special eval corpus)")]
    NoPositions,
    #[error("no score recorded for model `{model}` on language `{lang}`")]
    MissingScore { model: String, lang: String },
    #[error("no gold-standard monolingual score for language `{lang}`")]
    MissingGold { lang: String },
    #[error("transfer from a language to itself is not a transfer score")]
    SelfTransfer,
    #[error("no transfer value for pair ({src}, {tgt})")]
    MissingTransfer { src: String, tgt: String },
    #[error("cross-lingual average needs at least two languages, got {got}")]
    TooFewLanguages { got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Reciprocal rank of the gold token in one logit row. Rank is 1 plus the
/// number of strictly greater logits, so ties resolve optimistically.
pub fn reciprocal_rank(logits: &[f32], gold: usize) -> f64 {
    let g = logits[gold];
    let rank = 1 + logits.iter().filter(|&&v| v > g).count();
    1.0 / rank as f64
}

/// Mean reciprocal rank of gold tokens at masked positions over a corpus.
/// Masking is drawn from `eval_seed` only, so scores are comparable across
/// models; the model runs in inference mode.
pub fn mrr(
    model: &MaskedLmModel,
    corpus: &CorpusSet,
    vocab: &Vocab,
    norm_cfgs: &[NormalizerConfig],
    masking: &MaskingConfig,
    batch_size: usize,
    eval_seed: u64,
) -> Result<f64, MetricsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let (batches, _) = make_batches(
        corpus,
        vocab,
        norm_cfgs,
        batch_size,
        model.config().max_seq_len,
        masking,
        &mut rng,
    );
    let mut total = 0.0f64;
    let mut n = 0usize;
    let v = vocab.len();
    for batch in &batches {
        let mut tape = crate::tensor::Tape::<f32>::inference();
        let mut mode = ForwardMode::Eval;
        let logits = model.forward_mlm(
            &mut tape,
            model.params(),
            &batch.token_ids,
            batch.rows,
            batch.seq_len,
            &batch.masks,
            &mut mode,
        )?;
        let data = tape.value(logits).data();
        for (i, &gold) in batch.golds.iter().enumerate() {
            total += reciprocal_rank(&data[i * v..(i + 1) * v], gold as usize);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoPositions);
    }
    Ok(total / n as f64)
}

/// Per-(model, language) scores plus the per-language gold standard
/// (each language's own monolingual model evaluated on that language).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    /// model -> language -> score
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    /// language -> monolingual-model score on its own language
    pub gold: BTreeMap<String, f64>,
}

impl ScoreTable {
    pub fn insert(&mut self, model: &str, lang: &str, score: f64) {
        self.scores.entry(model.to_string()).or_default().insert(lang.to_string(), score);
    }

    pub fn insert_gold(&mut self, lang: &str, score: f64) {
        self.gold.insert(lang.to_string(), score);
    }

    pub fn get(&self, model: &str, lang: &str) -> Result<f64, MetricsError> {
        self.scores
            .get(model)
            .and_then(|m| m.get(lang))
            .copied()
            .ok_or_else(|| MetricsError::MissingScore {
                model: model.to_string(),
                lang: lang.to_string(),
            })
    }

    /// Balanced score `B(M, L) = (1/|L|) * sum_l [S_M(l) - S_gold(l)]`:
    /// the mean per-language gap between a multilingual model and the
    /// matching monolingual gold standard. Non-positive in practice; zero
    /// means multilinguality is free.
    pub fn balanced_score(&self, model: &str, langs: &[String]) -> Result<f64, MetricsError> {
        if langs.is_empty() {
            return Err(MetricsError::TooFewLanguages { got: 0 });
        }
        let mut total = 0.0f64;
        for lang in langs {
            let s = self.get(model, lang)?;
            let g = self
                .gold
                .get(lang)
                .copied()
                .ok_or_else(|| MetricsError::MissingGold { lang: lang.clone() })?;
            total += s - g;
        }
        Ok(total / langs.len() as f64)
    }
}

/// Off-diagonal matrix of zero-shot transfer scores
/// `Z(l1, l2) = S(probe trained on l1, evaluated on l2)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransferMatrix {
    values: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TransferMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, src: &str, tgt: &str, score: f64) -> Result<(), MetricsError> {
        if src == tgt {
            return Err(MetricsError::SelfTransfer);
        }
        self.values.entry(src.to_string()).or_default().insert(tgt.to_string(), score);
        Ok(())
    }

    pub fn transfer_score(&self, src: &str, tgt: &str) -> Result<f64, MetricsError> {
        if src == tgt {
            return Err(MetricsError::SelfTransfer);
        }
        self.values.get(src).and_then(|m| m.get(tgt)).copied().ok_or_else(|| {
            MetricsError::MissingTransfer { src: src.to_string(), tgt: tgt.to_string() }
        })
    }

    /// `C_Z = (1/(|L|^2 - |L|)) * sum_{l1 != l2} Z(l1, l2)`; every ordered
    /// off-diagonal pair must be present.
    pub fn avg_cross_lingual(&self, langs: &[String]) -> Result<f64, MetricsError> {
        let k = langs.len();
        if k < 2 {
            return Err(MetricsError::TooFewLanguages { got: k });
        }
        let mut total = 0.0f64;
        for src in langs {
            for tgt in langs {
                if src != tgt {
                    total += self.transfer_score(src, tgt)?;
                }
            }
        }
        Ok(total / (k * k - k) as f64)
    }
}

/// Outcome of a one-sided comparison `baseline <= student`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HypothesisVerdict {
    pub holds: bool,
    /// `student - baseline`; non-negative exactly when the hypothesis holds.
    pub margin: f64,
}

/// Check the claim that the student is at least as good as a baseline on a
/// higher-is-better score. Equal scores satisfy the hypothesis.
pub fn compare_hypothesis(baseline: f64, student: f64) -> HypothesisVerdict {
    HypothesisVerdict { holds: baseline <= student, margin: student - baseline }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (n-1 denominator; 0 for n < 2).
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

/// Hypothesis outcomes for one baseline/student pairing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisPair {
    pub balanced: HypothesisVerdict,
    /// task -> verdict on C_Z
    pub transfer: BTreeMap<String, HypothesisVerdict>,
}

/// Full evaluation output; field order is the canonical JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub models: Vec<String>,
    /// model -> language -> MRR
    pub mrr: BTreeMap<String, BTreeMap<String, f64>>,
    /// model -> balanced score B
    pub balanced: BTreeMap<String, f64>,
    /// model -> task -> source language -> target language -> score
    pub transfer: BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, MeanStd>>>>,
    /// "baseline_vs_student" pairs
    pub hypotheses: BTreeMap<String, HypothesisPair>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn langs(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reciprocal_rank_counts_strictly_greater() {
        assert_eq!(reciprocal_rank(&[3.0, 1.0, 2.0], 0), 1.0);
        assert_eq!(reciprocal_rank(&[3.0, 1.0, 2.0], 2), 0.5);
        assert_eq!(reciprocal_rank(&[3.0, 1.0, 2.0], 1), 1.0 / 3.0);
        // ties resolve optimistically
        assert_eq!(reciprocal_rank(&[2.0, 2.0, 2.0], 1), 1.0);
    }

    #[test]
    fn balanced_score_zero_when_matching_gold() {
        let mut t = ScoreTable::default();
        for l in ["l1", "l2"] {
            t.insert("m", l, 0.7);
            t.insert_gold(l, 0.7);
        }
        let b = t.balanced_score("m", &langs(&["l1", "l2"])).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn balanced_score_two_language_fixture() {
        let mut t = ScoreTable::default();
        t.insert("m", "l1", 0.4);
        t.insert("m", "l2", 0.1);
        t.insert_gold("l1", 0.6);
        t.insert_gold("l2", 0.2);
        let b = t.balanced_score("m", &langs(&["l1", "l2"])).unwrap();
        assert_relative_eq!(b, -0.15, epsilon = 1e-12);
    }

    #[test]
    fn balanced_score_missing_language_rejected() {
        let mut t = ScoreTable::default();
        t.insert("m", "l1", 0.4);
        t.insert_gold("l1", 0.6);
        assert!(matches!(
            t.balanced_score("m", &langs(&["l1", "l2"])),
            Err(MetricsError::MissingScore { .. })
        ));
        t.insert("m", "l2", 0.4);
        assert!(matches!(
            t.balanced_score("m", &langs(&["l1", "l2"])),
            Err(MetricsError::MissingGold { .. })
        ));
    }

    #[test]
    fn transfer_rejects_self_and_missing() {
        let mut m = TransferMatrix::new();
        assert!(matches!(m.insert("a", "a", 0.5), Err(MetricsError::SelfTransfer)));
        m.insert("a", "b", 0.5).unwrap();
        assert!(matches!(m.transfer_score("a", "a"), Err(MetricsError::SelfTransfer)));
        assert!(matches!(
            m.transfer_score("b", "a"),
            Err(MetricsError::MissingTransfer { .. })
        ));
        assert_eq!(m.transfer_score("a", "b").unwrap(), 0.5);
    }

    #[test]
    fn avg_cross_lingual_two_languages() {
        let mut m = TransferMatrix::new();
        m.insert("a", "b", 0.6).unwrap();
        m.insert("b", "a", 0.4).unwrap();
        let cz = m.avg_cross_lingual(&langs(&["a", "b"])).unwrap();
        assert_relative_eq!(cz, 0.5, epsilon = 1e-12);
        assert!(matches!(
            m.avg_cross_lingual(&langs(&["a"])),
            Err(MetricsError::TooFewLanguages { got: 1 })
        ));
    }

    #[test]
    fn avg_cross_lingual_excludes_diagonal() {
        let mut m = TransferMatrix::new();
        for (s, t, v) in
            [("a", "b", 0.2), ("a", "c", 0.4), ("b", "a", 0.6), ("b", "c", 0.8), ("c", "a", 1.0), ("c", "b", 0.0)]
        {
            m.insert(s, t, v).unwrap();
        }
        let cz = m.avg_cross_lingual(&langs(&["a", "b", "c"])).unwrap();
        assert_relative_eq!(cz, 3.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn hypothesis_margins_and_reflexivity() {
        let v = compare_hypothesis(0.3, 0.5);
        assert!(v.holds);
        assert_relative_eq!(v.margin, 0.2, epsilon = 1e-12);
        let v = compare_hypothesis(0.5, 0.3);
        assert!(!v.holds);
        assert_relative_eq!(v.margin, -0.2, epsilon = 1e-12);
        // a model compared with itself always satisfies the hypothesis
        let v = compare_hypothesis(0.42, 0.42);
        assert!(v.holds);
        assert_eq!(v.margin, 0.0);
    }

    #[test]
    fn mean_std_uses_sample_variance() {
        let ms = MeanStd::from_values(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(ms.mean, 2.0, epsilon = 1e-12);
        assert_relative_eq!(ms.std, 1.0, epsilon = 1e-12);
        let single = MeanStd::from_values(&[5.0]);
        assert_eq!(single.std, 0.0);
    }

    #[test]
    fn report_serializes_with_stable_key_order() {
        let mut mrr = BTreeMap::new();
        mrr.insert("student".to_string(), {
            let mut m = BTreeMap::new();
            m.insert("l1".to_string(), 0.9);
            m
        });
        let report = MetricsReport {
            models: vec!["student".into()],
            mrr,
            balanced: BTreeMap::new(),
            transfer: BTreeMap::new(),
            hypotheses: BTreeMap::new(),
            config: serde_json::json!({}),
            seeds: BTreeMap::new(),
        };
        let a = serde_json::to_string(&report).unwrap();
        let b = serde_json::to_string(&report).unwrap();
        assert_eq!(a, b);
        let parsed: MetricsReport = serde_json::from_str(&a).unwrap();
        assert_eq!(parsed.models, report.models);
        assert_eq!(parsed.mrr["student"]["l1"], 0.9);
    }
}
