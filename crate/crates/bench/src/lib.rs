//! Shared fixtures for the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bd_core::corpus::CorpusSet;
use bd_core::tensor::Tensor;

/// Deterministic dense f32 tensor filled from a seeded RNG.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Small two-language corpus with pseudo-words over a fixed alphabet,
/// sized for tokenizer and balancing benchmarks.
pub fn sample_corpus(sentences_per_lang: usize, seed: u64) -> CorpusSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lang = |tag: char| -> Vec<String> {
        (0..sentences_per_lang)
            .map(|_| {
                let words = rng.gen_range(4..12);
                (0..words)
                    .map(|_| {
                        let len = rng.gen_range(2..8);
                        (0..len)
                            .map(|_| {
                                let c = rng.gen_range(0..6u32);
                                char::from_u32(tag as u32 + c).unwrap()
                            })
                            .collect::<String>()
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    };
    CorpusSet::from_sentences(vec!["aa".into(), "bb".into()], vec![lang('a'), lang('h')]).unwrap()
}
