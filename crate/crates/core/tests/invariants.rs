//! Property-based invariants for normalization, tokenization, balancing,
//! splitting, and metric bounds.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bd_core::corpus::CorpusSet;
use bd_core::metrics::{reciprocal_rank, TransferMatrix};
use bd_core::tokenizer::{decode, encode, normalize, train_wordpiece, NormalizerConfig};

fn cfg() -> NormalizerConfig {
    NormalizerConfig::default()
}

proptest! {
    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,60}") {
        let once = normalize(&s, &cfg());
        prop_assert_eq!(normalize(&once, &cfg()), once);
    }

    #[test]
    fn normalize_accentless_is_idempotent_too(s in "\\PC{0,60}") {
        let keep = NormalizerConfig { lowercase: true, strip_accents: false };
        let once = normalize(&s, &keep);
        prop_assert_eq!(normalize(&once, &keep), once);
    }

    #[test]
    fn encode_decode_roundtrip_over_known_alphabet(
        words in proptest::collection::vec("[abcd]{1,6}", 1..8)
    ) {
        // vocabulary containing every letter guarantees UNK-free encoding
        let corpus = CorpusSet::from_sentences(
            vec!["x".into()],
            vec![vec!["aa ab ba bb cc cd dc dd abcd".into()]],
        ).unwrap();
        let vocab = train_wordpiece(&corpus, 64, &[cfg()]).unwrap();
        let sentence = words.join(" ");
        let ids = encode(&sentence, &vocab, &cfg(), 512);
        let back = decode(&ids, &vocab).unwrap();
        prop_assert_eq!(back, normalize(&sentence, &cfg()));
    }

    #[test]
    fn balance_bounds_and_idempotence(
        lens in proptest::collection::vec(
            proptest::collection::vec(1usize..40, 1..30), 1..4),
        seed in 0u64..1000
    ) {
        let languages: Vec<String> = (0..lens.len()).map(|i| format!("l{i}")).collect();
        let sentences: Vec<Vec<String>> = lens
            .iter()
            .map(|ls| ls.iter().map(|&n| "x".repeat(n)).collect())
            .collect();
        let corpus = CorpusSet::from_sentences(languages, sentences).unwrap();
        let m = *corpus.char_counts().iter().min().unwrap();
        let longest = lens.iter().flatten().copied().max().unwrap();

        let balanced = corpus.balance(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let counts = balanced.char_counts();
        // every language within one sentence length of the original minimum
        for &c in &counts {
            prop_assert!(c <= m + longest, "count {c} exceeds m {m} + longest {longest}");
        }
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= longest);
        // no language is ever emptied
        for i in 0..counts.len() {
            prop_assert!(!balanced.lang_sentences(i).is_empty());
        }
        // idempotence on character counts, even for adversarial lengths
        let again = balanced.balance(&mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
        prop_assert_eq!(again.char_counts(), balanced.char_counts());
    }

    #[test]
    fn split_partitions_every_language(
        n in 1usize..200,
        seed in 0u64..1000
    ) {
        let sents: Vec<String> = (0..n).map(|i| format!("sentence number {i}")).collect();
        let corpus = CorpusSet::from_sentences(vec!["l".into()], vec![sents]).unwrap();
        let (train, dev, test) = corpus.split(seed);
        let total = train.lang_sentences(0).len()
            + dev.lang_sentences(0).len()
            + test.lang_sentences(0).len();
        prop_assert_eq!(total, n);
        // deterministic
        let (train2, ..) = corpus.split(seed);
        prop_assert_eq!(train.lang_sentences(0), train2.lang_sentences(0));
    }

    #[test]
    fn reciprocal_rank_in_unit_interval_and_monotone(
        logits in proptest::collection::vec(-10.0f32..10.0, 2..20),
        gold_raw in 0usize..20,
        boost in 0.0f32..5.0
    ) {
        let gold = gold_raw % logits.len();
        let rr = reciprocal_rank(&logits, gold);
        prop_assert!(rr > 0.0 && rr <= 1.0);
        // raising the gold logit never lowers MRR
        let mut boosted = logits.clone();
        boosted[gold] += boost;
        prop_assert!(reciprocal_rank(&boosted, gold) >= rr);
    }

    #[test]
    fn avg_cross_lingual_stays_in_unit_interval(
        z_ab in 0.0f64..=1.0,
        z_ba in 0.0f64..=1.0
    ) {
        let mut m = TransferMatrix::new();
        m.insert("a", "b", z_ab).unwrap();
        m.insert("b", "a", z_ba).unwrap();
        let cz = m.avg_cross_lingual(&["a".to_string(), "b".to_string()]).unwrap();
        prop_assert!((0.0..=1.0).contains(&cz));
    }
}
