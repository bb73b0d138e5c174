//! Frozen-encoder probing: softmax-regression tag classifiers on the first
//! sub-token representation of each word, with multi-run statistics and the
//! full cross-lingual probe matrix.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaggedCorpus;
use crate::losses::hard_loss;
use crate::metrics::MeanStd;
use crate::model::{MaskedLmModel, ModelError};
use crate::tensor::{AdamConfig, OptimizerState, ParamSet, Tape, Tensor, TensorError};
use crate::tokenizer::{encode, NormalizerConfig, Vocab, CLS_ID, PAD_ID, SEP_ID};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no usable tagged words (all sentences empty or truncated away)")]
    NoFeatures,
    #[error("no evaluable tokens: every gold tag is outside the probe's tag set")]
    NothingEvaluable,
    #[error("probe was trained for hidden dim {probe}, model has {model}")]
    DimMismatch { probe: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub runs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { runs: 5, epochs: 20, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

/// A trained softmax-regression tag classifier over frozen features.
#[derive(Debug, Clone)]
pub struct Probe {
    pub language: String,
    /// Tag names in label-index order.
    pub tags: Vec<String>,
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

/// First-sub-token features: one row of the encoder's final hidden state per
/// tagged word, plus that word's gold tag.
struct Features {
    /// `num_words * hidden` row-major.
    rows: Vec<f32>,
    hidden: usize,
    tags: Vec<String>,
}

const FEATURE_BATCH: usize = 8;

/// Encode tagged sentences and collect the final-layer representation of
/// each word's first sub-token. Words whose first sub-token falls beyond
/// the sequence limit are dropped.
fn extract_features(
    model: &MaskedLmModel,
    corpus: &TaggedCorpus,
    vocab: &Vocab,
    norm_cfg: &NormalizerConfig,
) -> Result<Features, ProbeError> {
    let max_len = model.config().max_seq_len;
    let hidden = model.config().hidden_dim;

    // (token ids, first-sub-token position per kept word, kept gold tags)
    let mut prepared: Vec<(Vec<u32>, Vec<usize>, Vec<String>)> = Vec::new();
    for sentence in &corpus.sentences {
        let mut ids = vec![CLS_ID];
        let mut firsts = Vec::new();
        let mut tags = Vec::new();
        for (word, tag) in sentence {
            let pieces = encode(word, vocab, norm_cfg, max_len);
            // strip the [CLS]/[SEP] frame added around the single word
            let pieces = &pieces[1..pieces.len() - 1];
            if pieces.is_empty() {
                continue; // word normalized to nothing
            }
            if ids.len() < max_len - 1 {
                firsts.push(ids.len());
                tags.push(tag.clone());
            }
            ids.extend_from_slice(pieces);
        }
        ids.truncate(max_len - 1);
        ids.push(SEP_ID);
        if !firsts.is_empty() {
            prepared.push((ids, firsts, tags));
        }
    }
    if prepared.is_empty() {
        return Err(ProbeError::NoFeatures);
    }

    let mut rows = Vec::new();
    let mut tags = Vec::new();
    for chunk in prepared.chunks(FEATURE_BATCH) {
        let seq = chunk.iter().map(|(ids, _, _)| ids.len()).max().unwrap();
        let mut token_ids = vec![PAD_ID; chunk.len() * seq];
        for (r, (ids, _, _)) in chunk.iter().enumerate() {
            token_ids[r * seq..r * seq + ids.len()].copy_from_slice(ids);
        }
        let states = model.hidden_states(&token_ids, chunk.len(), seq)?;
        let data = states.data();
        for (r, (_, firsts, sent_tags)) in chunk.iter().enumerate() {
            for (&pos, tag) in firsts.iter().zip(sent_tags) {
                let start = (r * seq + pos) * hidden;
                rows.extend_from_slice(&data[start..start + hidden]);
                tags.push(tag.clone());
            }
        }
    }
    Ok(Features { rows, hidden, tags })
}

/// Train `cfg.runs` independently-seeded probes on frozen features from
/// `model`. The base model is never modified.
pub fn train_probe(
    model: &MaskedLmModel,
    train: &TaggedCorpus,
    vocab: &Vocab,
    norm_cfg: &NormalizerConfig,
    cfg: &ProbeConfig,
) -> Result<Vec<Probe>, ProbeError> {
    let features = extract_features(model, train, vocab, norm_cfg)?;
    let tags: Vec<String> = train.tag_set.iter().cloned().collect();
    let tag_index: BTreeMap<&str, usize> =
        tags.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let labels: Vec<u32> = features.tags.iter().map(|t| tag_index[t.as_str()] as u32).collect();
    let n = labels.len();
    let h = features.hidden;
    let t = tags.len();

    let mut probes = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(run as u64));
        let mut params = ParamSet::new();
        let init: Vec<f32> =
            (0..h * t).map(|_| (rng.gen::<f32>() - 0.5) * 0.04).collect();
        let w = params.add("probe_w", Tensor::new(vec![h, t], init).unwrap());
        let b = params.add("probe_b", Tensor::zeros(vec![t]));

        let steps_per_epoch = n.div_ceil(cfg.batch_size);
        let mut opt =
            OptimizerState::new(AdamConfig::new(cfg.lr, cfg.epochs * steps_per_epoch), &params);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mut x = Vec::with_capacity(chunk.len() * h);
                let mut y = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    x.extend_from_slice(&features.rows[i * h..(i + 1) * h]);
                    y.push(labels[i]);
                }
                let mut tape = Tape::<f32>::new();
                let xv = tape.constant(Tensor::new(vec![chunk.len(), h], x).unwrap());
                let wv = tape.param(&params, w);
                let bv = tape.param(&params, b);
                let z = tape.matmul(xv, wv, false)?;
                let logits = tape.add_bias(z, bv)?;
                let loss = hard_loss(&mut tape, logits, &y)?;
                tape.backward(loss)?;
                tape.export_param_grads(&mut params);
                opt.adam_step(&mut params)?;
            }
        }
        probes.push(Probe {
            language: train.language.clone(),
            tags: tags.clone(),
            weight: params.get(w).value.clone(),
            bias: params.get(b).value.clone(),
        });
    }
    Ok(probes)
}

/// Accuracy and per-tag macro-F1 of a probe on a tagged corpus, plus the
/// number of tokens skipped because their gold tag is outside the probe's
/// tag set. Macro-F1 averages over gold-present classes only.
pub fn eval_probe(
    probe: &Probe,
    model: &MaskedLmModel,
    test: &TaggedCorpus,
    vocab: &Vocab,
    norm_cfg: &NormalizerConfig,
) -> Result<ProbeEval, ProbeError> {
    let h = model.config().hidden_dim;
    if probe.weight.shape()[0] != h {
        return Err(ProbeError::DimMismatch { probe: probe.weight.shape()[0], model: h });
    }
    let features = extract_features(model, test, vocab, norm_cfg)?;
    let tag_index: BTreeMap<&str, usize> =
        probe.tags.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let t = probe.tags.len();
    let w = probe.weight.data();
    let b = probe.bias.data();

    let mut golds = Vec::new();
    let mut preds = Vec::new();
    let mut skipped = 0usize;
    for (i, tag) in features.tags.iter().enumerate() {
        let Some(&gold) = tag_index.get(tag.as_str()) else {
            skipped += 1;
            continue;
        };
        let x = &features.rows[i * h..(i + 1) * h];
        let mut best = 0usize;
        let mut best_z = f32::NEG_INFINITY;
        for j in 0..t {
            let z: f32 = b[j] + x.iter().zip(w[j..].iter().step_by(t)).map(|(a, c)| a * c).sum::<f32>();
            if z > best_z {
                best_z = z;
                best = j;
            }
        }
        golds.push(gold);
        preds.push(best);
    }
    if golds.is_empty() {
        return Err(ProbeError::NothingEvaluable);
    }
    let (accuracy, macro_f1) = accuracy_and_macro_f1(&golds, &preds, t);
    Ok(ProbeEval { accuracy, macro_f1, skipped })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeEval {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub skipped: usize,
}

/// Token accuracy and macro-F1 over classes that appear in the gold labels.
/// A class's F1 is 0 when precision and recall are both 0.
pub fn accuracy_and_macro_f1(golds: &[usize], preds: &[usize], num_classes: usize) -> (f64, f64) {
    assert_eq!(golds.len(), preds.len());
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut gold_present = vec![false; num_classes];
    let mut correct = 0usize;
    for (&g, &p) in golds.iter().zip(preds) {
        gold_present[g] = true;
        if g == p {
            tp[g] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let mut f1_sum = 0.0f64;
    let mut classes = 0usize;
    for c in 0..num_classes {
        if !gold_present[c] {
            continue;
        }
        classes += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    (correct as f64 / golds.len() as f64, f1_sum / classes as f64)
}

/// Aggregated evaluation of several probe runs on the same test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStats {
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub skipped: usize,
}

/// K x K matrix of probe scores: diagonal cells are in-language, off-diagonal
/// cells are zero-shot transfer onto the target language's test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeMatrix {
    pub languages: Vec<String>,
    /// source -> target -> stats
    pub cells: BTreeMap<String, BTreeMap<String, CellStats>>,
}

const PROBE_TEST_PERCENT: u64 = 20;

/// Train probes per source language and evaluate every (source, target)
/// pair. Training and evaluation splits never overlap: each language's
/// tagged corpus is split once and probes only ever see the train side.
pub fn probe_matrix(
    model: &MaskedLmModel,
    tagged: &[TaggedCorpus],
    vocab: &Vocab,
    norm_cfgs: &[NormalizerConfig],
    cfg: &ProbeConfig,
) -> Result<ProbeMatrix, ProbeError> {
    let splits: Vec<(TaggedCorpus, TaggedCorpus)> = tagged
        .iter()
        .map(|t| t.split(PROBE_TEST_PERCENT, cfg.seed))
        .collect();

    let mut cells: BTreeMap<String, BTreeMap<String, CellStats>> = BTreeMap::new();
    for (i, (train, _)) in splits.iter().enumerate() {
        let probes = train_probe(model, train, vocab, &norm_cfgs[i], cfg)?;
        let mut row = BTreeMap::new();
        for (j, (_, test)) in splits.iter().enumerate() {
            let mut accs = Vec::with_capacity(probes.len());
            let mut f1s = Vec::with_capacity(probes.len());
            let mut skipped = 0usize;
            for probe in &probes {
                let eval = eval_probe(probe, model, test, vocab, &norm_cfgs[j])?;
                accs.push(eval.accuracy);
                f1s.push(eval.macro_f1);
                skipped = eval.skipped;
            }
            row.insert(
                tagged[j].language.clone(),
                CellStats {
                    accuracy: MeanStd::from_values(&accs),
                    macro_f1: MeanStd::from_values(&f1s),
                    skipped,
                },
            );
        }
        cells.insert(tagged[i].language.clone(), row);
    }
    Ok(ProbeMatrix { languages: tagged.iter().map(|t| t.language.clone()).collect(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SyntheticLangSpec};
    use crate::model::ModelConfig;
    use crate::tokenizer::train_wordpiece;
    use approx::assert_relative_eq;

    #[test]
    fn macro_f1_fixture() {
        // gold [A,A,B,B], pred [A,B,B,B]:
        // F1(A) = 2/3, F1(B) = 0.8 -> macro 0.73333, accuracy 0.75
        let (acc, f1) = accuracy_and_macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2);
        assert_relative_eq!(acc, 0.75, epsilon = 1e-12);
        assert_relative_eq!(f1, (2.0 / 3.0 + 0.8) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(f1, 0.73333, epsilon = 1e-5);
    }

    #[test]
    fn macro_f1_excludes_classes_absent_from_gold() {
        // class 2 never appears in gold and is never predicted -> excluded
        let (_, with_extra) = accuracy_and_macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 3);
        let (_, without) = accuracy_and_macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2);
        assert_eq!(with_extra, without);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let (acc, f1) = accuracy_and_macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3);
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 1.0);
    }

    fn world() -> (MaskedLmModel, Vec<TaggedCorpus>, Vocab, Vec<NormalizerConfig>) {
        let specs = vec![
            SyntheticLangSpec {
                name: "a".into(),
                vocab_size: 24,
                zipf_exponent: 1.1,
                bigram_seed: 1,
                script_offset: 0x61,
                cognate_fraction: 0.5,
                tag_arity: 3,
            },
            SyntheticLangSpec {
                name: "b".into(),
                vocab_size: 24,
                zipf_exponent: 1.1,
                bigram_seed: 2,
                script_offset: 0x3b1,
                cognate_fraction: 0.5,
                tag_arity: 3,
            },
        ];
        let (corpus, tagged) = gen_synthetic(&specs, &[2_500, 2_500], 60, 9).unwrap();
        let cfgs = vec![NormalizerConfig::default(); 2];
        let vocab = train_wordpiece(&corpus, 96, &cfgs).unwrap();
        let mut mc = ModelConfig::desk(vocab.len(), 3);
        mc.num_layers = 1;
        mc.hidden_dim = 16;
        mc.ffn_dim = 32;
        mc.max_seq_len = 48;
        mc.dropout_rate = 0.0;
        let model = MaskedLmModel::init(mc).unwrap();
        (model, tagged, vocab, cfgs)
    }

    #[test]
    fn probe_training_leaves_model_untouched_and_is_deterministic() {
        let (model, tagged, vocab, cfgs) = world();
        let before: Vec<Vec<f32>> =
            model.params().iter().map(|(_, p)| p.value.data().to_vec()).collect();
        let cfg = ProbeConfig { runs: 2, epochs: 3, batch_size: 16, lr: 1e-2, seed: 5 };
        let p1 = train_probe(&model, &tagged[0], &vocab, &cfgs[0], &cfg).unwrap();
        let p2 = train_probe(&model, &tagged[0], &vocab, &cfgs[0], &cfg).unwrap();
        let after: Vec<Vec<f32>> =
            model.params().iter().map(|(_, p)| p.value.data().to_vec()).collect();
        assert_eq!(before, after, "probing must not touch the base model");
        assert_eq!(p1.len(), 2);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.weight.data(), b.weight.data());
        }
        // distinct run seeds give distinct probes
        assert_ne!(p1[0].weight.data(), p1[1].weight.data());
    }

    #[test]
    fn synthetic_tags_are_learnable_from_surface_forms() {
        // tags are a deterministic function of the word type, so even a
        // randomly-initialized encoder should let a probe beat chance (1/3)
        let (model, tagged, vocab, cfgs) = world();
        let (train, test) = tagged[0].split(20, 5);
        let cfg = ProbeConfig { runs: 1, epochs: 12, batch_size: 16, lr: 1e-2, seed: 5 };
        let probes = train_probe(&model, &train, &vocab, &cfgs[0], &cfg).unwrap();
        let eval = eval_probe(&probes[0], &model, &test, &vocab, &cfgs[0]).unwrap();
        assert!(eval.accuracy > 1.0 / 3.0, "accuracy {} not above chance", eval.accuracy);
    }

    #[test]
    fn eval_skips_unknown_tags_and_rejects_all_unknown() {
        let (model, tagged, vocab, cfgs) = world();
        let cfg = ProbeConfig { runs: 1, epochs: 1, batch_size: 16, lr: 1e-2, seed: 5 };
        let probes = train_probe(&model, &tagged[0], &vocab, &cfgs[0], &cfg).unwrap();

        let mut weird = tagged[0].clone();
        weird.sentences.truncate(4);
        for s in &mut weird.sentences {
            for (_, tag) in s.iter_mut() {
                *tag = "X9".into();
            }
        }
        let weird = TaggedCorpus::new(weird.language.clone(), weird.sentences.clone());
        assert!(matches!(
            eval_probe(&probes[0], &model, &weird, &vocab, &cfgs[0]),
            Err(ProbeError::NothingEvaluable)
        ));

        // half-unknown: skipped counted, rest evaluated
        let mut mixed = tagged[0].clone();
        mixed.sentences.truncate(4);
        let mut flip = false;
        for s in &mut mixed.sentences {
            for (_, tag) in s.iter_mut() {
                if flip {
                    *tag = "X9".into();
                }
                flip = !flip;
            }
        }
        let mixed = TaggedCorpus::new(mixed.language.clone(), mixed.sentences.clone());
        let eval = eval_probe(&probes[0], &model, &mixed, &vocab, &cfgs[0]).unwrap();
        assert!(eval.skipped > 0);
    }

    #[test]
    fn probe_matrix_covers_all_pairs() {
        let (model, tagged, vocab, cfgs) = world();
        let cfg = ProbeConfig { runs: 2, epochs: 2, batch_size: 16, lr: 1e-2, seed: 5 };
        let matrix = probe_matrix(&model, &tagged, &vocab, &cfgs, &cfg).unwrap();
        assert_eq!(matrix.languages, vec!["a".to_string(), "b".to_string()]);
        for src in &matrix.languages {
            for tgt in &matrix.languages {
                let cell = &matrix.cells[src][tgt];
                assert!((0.0..=1.0).contains(&cell.accuracy.mean));
                assert!((0.0..=1.0).contains(&cell.macro_f1.mean));
            }
        }
    }
}
