//! Seeded synthetic languages: Zipfian unigram vocabulary, bigram chain,
//! per-language scripts, and a configurable cognate overlap with a
//! reference language. Tags are a deterministic function of the word type,
//! giving probes a learnable target.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusSet, TaggedCorpus};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLangSpec {
    pub name: String,
    pub vocab_size: usize,
    /// Zipf exponent for the unigram distribution over word types.
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Seed offset for this language's bigram transition structure.
    #[serde(default)]
    pub bigram_seed: u64,
    /// Unicode codepoint base of the language's script.
    pub script_offset: u32,
    /// Fraction of word types shared (surface form and tag) with the
    /// reference language (the first spec in the list).
    #[serde(default)]
    pub cognate_fraction: f64,
    /// Tags are `word_type mod tag_arity`.
    #[serde(default = "default_arity")]
    pub tag_arity: usize,
}

fn default_zipf() -> f64 {
    1.1
}

fn default_arity() -> usize {
    4
}

const SCRIPT_BASE: u32 = 20; // digits per script position
const MIN_WORDS: usize = 6;
const MAX_WORDS: usize = 14;

impl SyntheticLangSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: String| CorpusError::BadSpec { name: self.name.clone(), reason };
        if self.vocab_size == 0 {
            return Err(bad("vocab_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cognate_fraction) {
            return Err(bad(format!("cognate fraction {} outside [0,1]", self.cognate_fraction)));
        }
        let shared = self.cognate_fraction * self.vocab_size as f64;
        if (shared - shared.round()).abs() > 1e-9 {
            return Err(bad(format!(
                "cognate fraction {} times vocab size {} is not an integer",
                self.cognate_fraction, self.vocab_size
            )));
        }
        if self.tag_arity == 0 {
            return Err(bad("tag_arity must be positive".into()));
        }
        if char::from_u32(self.script_offset).is_none()
            || char::from_u32(self.script_offset + SCRIPT_BASE - 1).is_none()
        {
            return Err(bad(format!("script offset {:#x} is not a usable codepoint range", self.script_offset)));
        }
        Ok(())
    }

    fn shared_types(&self) -> usize {
        (self.cognate_fraction * self.vocab_size as f64).round() as usize
    }

    /// Render a word type id as a surface form. Shared types use the
    /// reference script and the identity pattern so cognates are
    /// string-identical across languages; unique types go through the
    /// language's own pattern permutation so two languages' unique
    /// vocabularies are not accidental isomorphs of each other.
    fn surface(&self, word: usize, reference_offset: u32, perm: &[usize]) -> String {
        let shared = word < self.shared_types();
        let offset = if shared { reference_offset } else { self.script_offset };
        let mut digits = Vec::new();
        let mut v = if shared { word } else { perm[word] };
        loop {
            digits.push((v % SCRIPT_BASE as usize) as u32);
            v /= SCRIPT_BASE as usize;
            if v == 0 {
                break;
            }
        }
        // Fixed width 2 keeps one-type words from colliding with digits of others.
        while digits.len() < 2 {
            digits.push(0);
        }
        digits
            .iter()
            .rev()
            .map(|&d| char::from_u32(offset + d).expect("validated script range"))
            .collect()
    }

    fn tag(&self, word: usize) -> String {
        format!("T{}", word % self.tag_arity)
    }

    /// Bijection on word ids used for surface rendering: identity on the
    /// shared head range, a language-seeded shuffle of the unique tail.
    fn surface_perm(&self, global_seed: u64) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.vocab_size).collect();
        let shared = self.shared_types();
        let mut rng = ChaCha8Rng::seed_from_u64(super::fnv1a(
            global_seed ^ 0x73_75_72_66,
            self.name.as_bytes(),
        ));
        // Fisher-Yates over the unique tail only, so shared surfaces stay
        // put and the mapping remains collision-free.
        for i in (shared + 1..self.vocab_size).rev() {
            let j = rng.gen_range(shared..=i);
            perm.swap(i, j);
        }
        perm
    }
}

/// Cumulative Zipf distribution over `n` ranks.
struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, exponent: f64) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            acc += 1.0 / ((i + 1) as f64).powf(exponent);
            cumulative.push(acc);
        }
        Self { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.gen_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= u)
    }
}

/// Per-word preferred successors: a sparse bigram structure on top of the
/// Zipf unigram, fixed by the language's bigram seed.
struct BigramChain {
    zipf: Zipf,
    successors: Vec<[usize; 4]>,
}

const SUCCESSOR_PROB: f64 = 0.6;

impl BigramChain {
    fn new(spec: &SyntheticLangSpec, global_seed: u64) -> Self {
        let zipf = Zipf::new(spec.vocab_size, spec.zipf_exponent);
        let mut rng = ChaCha8Rng::seed_from_u64(global_seed ^ spec.bigram_seed);
        let successors = (0..spec.vocab_size)
            .map(|_| {
                [
                    zipf.sample(&mut rng),
                    zipf.sample(&mut rng),
                    zipf.sample(&mut rng),
                    zipf.sample(&mut rng),
                ]
            })
            .collect();
        Self { zipf, successors }
    }

    fn next<R: Rng>(&self, prev: Option<usize>, rng: &mut R) -> usize {
        match prev {
            Some(p) if rng.gen_bool(SUCCESSOR_PROB) => {
                self.successors[p][rng.gen_range(0..4)]
            }
            _ => self.zipf.sample(rng),
        }
    }
}

/// Generate sentence corpora (to the requested character counts, within one
/// sentence) plus a tagged corpus per language. Deterministic in
/// `(specs, chars_per_lang, tagged_sentences, seed)`.
pub fn gen_synthetic(
    specs: &[SyntheticLangSpec],
    chars_per_lang: &[usize],
    tagged_sentences: usize,
    seed: u64,
) -> Result<(CorpusSet, Vec<TaggedCorpus>), CorpusError> {
    if specs.len() != chars_per_lang.len() {
        return Err(CorpusError::LengthMismatch { langs: specs.len(), lists: chars_per_lang.len() });
    }
    for spec in specs {
        spec.validate()?;
    }
    let reference_offset = specs.first().map(|s| s.script_offset).unwrap_or(0);

    let mut languages = Vec::new();
    let mut sentences = Vec::new();
    let mut tagged = Vec::new();
    for (lang_idx, (spec, &target)) in specs.iter().zip(chars_per_lang).enumerate() {
        let chain = BigramChain::new(spec, seed);
        let perm = spec.surface_perm(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(
            super::fnv1a(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15), spec.name.as_bytes())
                ^ lang_idx as u64,
        );

        let mut lang_sentences = Vec::new();
        let mut chars = 0usize;
        while chars < target {
            let words = sample_sentence(&chain, &mut rng);
            let sentence: String = words
                .iter()
                .map(|&w| spec.surface(w, reference_offset, &perm))
                .collect::<Vec<_>>()
                .join(" ");
            chars += sentence.chars().count();
            lang_sentences.push(sentence);
        }

        let mut tagged_sents = Vec::new();
        for _ in 0..tagged_sentences {
            let words = sample_sentence(&chain, &mut rng);
            tagged_sents.push(
                words
                    .iter()
                    .map(|&w| (spec.surface(w, reference_offset, &perm), spec.tag(w)))
                    .collect(),
            );
        }

        languages.push(spec.name.clone());
        sentences.push(lang_sentences);
        tagged.push(TaggedCorpus::new(spec.name.clone(), tagged_sents));
    }
    Ok((CorpusSet::from_sentences(languages, sentences)?, tagged))
}

fn sample_sentence<R: Rng>(chain: &BigramChain, rng: &mut R) -> Vec<usize> {
    let len = rng.gen_range(MIN_WORDS..=MAX_WORDS);
    let mut words = Vec::with_capacity(len);
    let mut prev = None;
    for _ in 0..len {
        let w = chain.next(prev, rng);
        words.push(w);
        prev = Some(w);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, offset: u32, rho: f64) -> SyntheticLangSpec {
        SyntheticLangSpec {
            name: name.into(),
            vocab_size: 100,
            zipf_exponent: 1.1,
            bigram_seed: 0,
            script_offset: offset,
            cognate_fraction: rho,
            tag_arity: 4,
        }
    }

    fn word_types(corpus: &CorpusSet, lang: usize) -> std::collections::BTreeSet<String> {
        corpus.lang_sentences(lang).iter().flat_map(|s| s.split(' ').map(str::to_owned)).collect()
    }

    #[test]
    fn full_overlap_same_script_gives_identical_vocabularies() {
        let specs = vec![spec("a", 0x3041, 1.0), spec("b", 0x30a1, 1.0)];
        let (c, _) = gen_synthetic(&specs, &[20_000, 20_000], 0, 9).unwrap();
        // rho=1: every type renders in the reference script regardless of offset,
        // so the two languages draw from one identical vocabulary.
        let wa = word_types(&c, 0);
        let wb = word_types(&c, 1);
        assert!(wa.intersection(&wb).count() > 0);
        // all surfaces from the reference script range
        for w in wa.union(&wb) {
            for ch in w.chars() {
                assert!((0x3041..0x3041 + SCRIPT_BASE).contains(&(ch as u32)));
            }
        }
    }

    #[test]
    fn zero_overlap_disjoint_scripts_share_nothing() {
        let specs = vec![spec("a", 0x3041, 0.0), spec("b", 0x30a1, 0.0)];
        let (c, _) = gen_synthetic(&specs, &[10_000, 10_000], 0, 9).unwrap();
        let wa = word_types(&c, 0);
        let wb = word_types(&c, 1);
        assert_eq!(wa.intersection(&wb).count(), 0);
    }

    #[test]
    fn unique_types_are_not_isomorphic_across_languages() {
        // Same script, zero overlap: the surface *sets* coincide, but each
        // language maps frequency ranks onto patterns through its own
        // permutation, so the most frequent surface differs.
        let specs = vec![spec("a", 0x3041, 0.0), spec("b", 0x3041, 0.0)];
        let (c, _) = gen_synthetic(&specs, &[20_000, 20_000], 0, 9).unwrap();
        let top = |lang: usize| {
            let mut counts = std::collections::BTreeMap::new();
            for s in c.lang_sentences(lang) {
                for w in s.split(' ') {
                    *counts.entry(w.to_owned()).or_insert(0usize) += 1;
                }
            }
            counts.into_iter().max_by_key(|&(_, n)| n).unwrap().0
        };
        assert_ne!(top(0), top(1));
    }

    #[test]
    fn character_counts_hit_targets_within_one_sentence() {
        let specs = vec![spec("a", 0x61, 0.0)];
        let targets = [100_000usize, 50_000, 10_000];
        for &t in &targets {
            let (c, _) = gen_synthetic(&specs, &[t], 0, 5).unwrap();
            let got = c.char_count(0);
            let longest =
                c.lang_sentences(0).iter().map(|s| s.chars().count()).max().unwrap();
            assert!(got >= t && got < t + longest, "target {t}, got {got}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let specs = vec![spec("a", 0x61, 0.0), spec("b", 0x30a1, 0.5)];
        let (c1, t1) = gen_synthetic(&specs, &[5_000, 5_000], 20, 77).unwrap();
        let (c2, t2) = gen_synthetic(&specs, &[5_000, 5_000], 20, 77).unwrap();
        assert_eq!(c1.sentences(), c2.sentences());
        assert_eq!(t1[0].sentences, t2[0].sentences);
        assert_eq!(t1[1].sentences, t2[1].sentences);
    }

    #[test]
    fn invalid_cognate_fraction_rejected() {
        let mut s = spec("a", 0x61, 0.333);
        s.vocab_size = 100; // 33.3 shared types -> not an integer
        assert!(matches!(
            gen_synthetic(&[s], &[1000], 0, 1),
            Err(CorpusError::BadSpec { .. })
        ));
    }

    #[test]
    fn tags_follow_word_type() {
        let specs = vec![spec("a", 0x61, 0.0)];
        let (_, tagged) = gen_synthetic(&specs, &[1_000], 50, 3).unwrap();
        // Same surface always carries the same tag.
        let mut seen: std::collections::HashMap<String, String> = Default::default();
        for sent in &tagged[0].sentences {
            for (tok, tag) in sent {
                if let Some(prev) = seen.insert(tok.clone(), tag.clone()) {
                    assert_eq!(&prev, tag);
                }
            }
        }
        assert!(tagged[0].tag_set.len() <= 4);
    }
}
