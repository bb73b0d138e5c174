//! Experiment job configuration: one JSON document drives every command;
//! flags only pick the config path and stage subset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bd_core::corpus::SyntheticLangSpec;
use bd_core::losses::MaskingConfig;
use bd_core::model::ModelConfig;
use bd_core::tokenizer::NormalizerConfig;
use bd_core::training::{TrainMode, TrainPlan};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub languages: Vec<LanguageEntry>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub probe: ProbeSection,
    pub metrics: MetricsSection,
    pub split_seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageEntry {
    pub name: String,
    /// Sentence file; defaults to `<output_dir>/corpus/<name>.txt`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Two-column tagged file; defaults to `<output_dir>/corpus/<name>.conll`.
    #[serde(default)]
    pub tagged: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub strip_accents: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub specs: Vec<SyntheticLangSpec>,
    pub chars_per_lang: Vec<usize>,
    pub tagged_sentences: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub target_size: usize,
    #[serde(default = "default_true")]
    pub lowercase: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"desk"` (CPU-scale) or `"paper"` (reference hyperparameters).
    #[serde(default = "ModelSection::default_preset")]
    pub preset: String,
    #[serde(default)]
    pub num_layers: Option<usize>,
    #[serde(default)]
    pub num_heads: Option<usize>,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub ffn_dim: Option<usize>,
    #[serde(default)]
    pub max_seq_len: Option<usize>,
    #[serde(default)]
    pub dropout_rate: Option<f32>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Self::default_preset(),
            num_layers: None,
            num_heads: None,
            hidden_dim: None,
            ffn_dim: None,
            max_seq_len: None,
            dropout_rate: None,
        }
    }
}

impl ModelSection {
    fn default_preset() -> String {
        "desk".to_string()
    }

    /// Materialize a model config for the given vocabulary size; the seed is
    /// overridden per stage by the experiment driver.
    pub fn to_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut cfg = match self.preset.as_str() {
            "desk" => ModelConfig::desk(vocab_size, 0),
            "paper" => ModelConfig::paper(vocab_size, 0),
            other => bail!("unknown model preset `{other}` (expected `desk` or `paper`)"),
        };
        if let Some(v) = self.num_layers {
            cfg.num_layers = v;
        }
        if let Some(v) = self.num_heads {
            cfg.num_heads = v;
        }
        if let Some(v) = self.hidden_dim {
            cfg.hidden_dim = v;
        }
        if let Some(v) = self.ffn_dim {
            cfg.ffn_dim = v;
        }
        if let Some(v) = self.max_seq_len {
            cfg.max_seq_len = v;
        }
        if let Some(v) = self.dropout_rate {
            cfg.dropout_rate = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    #[serde(default = "TrainSection::d_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainSection::d_batch")]
    pub batch_size: usize,
    #[serde(default = "TrainSection::d_lr")]
    pub base_lr: f32,
    #[serde(default = "TrainSection::d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub alpha: f32,
    #[serde(default = "TrainSection::d_temp")]
    pub temperature: f32,
    #[serde(default = "TrainSection::d_mask_rate")]
    pub mask_rate: f64,
}

impl TrainSection {
    fn d_epochs() -> usize {
        10
    }
    fn d_batch() -> usize {
        8
    }
    fn d_lr() -> f32 {
        5e-5
    }
    fn d_patience() -> usize {
        2
    }
    fn d_temp() -> f32 {
        1.0
    }
    fn d_mask_rate() -> f64 {
        0.15
    }

    pub fn to_plan(&self) -> TrainPlan {
        let mut plan = TrainPlan::new(TrainMode::Hl, self.seed);
        plan.epochs = self.epochs;
        plan.batch_size = self.batch_size;
        plan.base_lr = self.base_lr;
        plan.patience = self.patience;
        plan.alpha = self.alpha;
        plan.temperature = self.temperature;
        plan.masking = MaskingConfig { rate: self.mask_rate, ..MaskingConfig::default() };
        plan
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "ProbeSection::d_runs")]
    pub runs: usize,
    #[serde(default = "ProbeSection::d_epochs")]
    pub epochs: usize,
    #[serde(default = "ProbeSection::d_batch")]
    pub batch_size: usize,
    #[serde(default = "ProbeSection::d_lr")]
    pub lr: f32,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            runs: Self::d_runs(),
            epochs: Self::d_epochs(),
            batch_size: Self::d_batch(),
            lr: Self::d_lr(),
            seed: 0,
        }
    }
}

impl ProbeSection {
    fn d_runs() -> usize {
        5
    }
    fn d_epochs() -> usize {
        20
    }
    fn d_batch() -> usize {
        32
    }
    fn d_lr() -> f32 {
        1e-3
    }

    pub fn to_config(&self) -> bd_core::probing::ProbeConfig {
        bd_core::probing::ProbeConfig {
            runs: self.runs,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Language groups for the Table-2-style report rows.
    pub low_res: Vec<String>,
    pub high_res: Vec<String>,
    #[serde(default = "MetricsSection::d_eval_seed")]
    pub eval_seed: u64,
    #[serde(default = "MetricsSection::d_batch")]
    pub batch_size: usize,
}

impl MetricsSection {
    fn d_eval_seed() -> u64 {
        7777
    }
    fn d_batch() -> usize {
        16
    }
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: JobConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.languages.is_empty() {
            bail!("config lists no languages");
        }
        for entry in &self.languages {
            if self.languages.iter().filter(|e| e.name == entry.name).count() > 1 {
                bail!("duplicate language `{}`", entry.name);
            }
        }
        if let Some(s) = &self.synthetic {
            if s.specs.len() != self.languages.len() || s.chars_per_lang.len() != s.specs.len() {
                bail!(
                    "synthetic section must list one spec and one size per language \
                     ({} languages, {} specs, {} sizes)",
                    self.languages.len(),
                    s.specs.len(),
                    s.chars_per_lang.len()
                );
            }
            for (spec, lang) in s.specs.iter().zip(&self.languages) {
                if spec.name != lang.name {
                    bail!(
                        "synthetic spec `{}` does not match language `{}` (order matters)",
                        spec.name,
                        lang.name
                    );
                }
            }
        }
        for group in [&self.metrics.low_res, &self.metrics.high_res] {
            for lang in group {
                if !self.languages.iter().any(|e| &e.name == lang) {
                    bail!("metrics group references unknown language `{lang}`");
                }
            }
        }
        Ok(())
    }

    pub fn corpus_path(&self, entry: &LanguageEntry) -> PathBuf {
        entry
            .corpus
            .clone()
            .unwrap_or_else(|| self.output_dir.join("corpus").join(format!("{}.txt", entry.name)))
    }

    pub fn tagged_path(&self, entry: &LanguageEntry) -> PathBuf {
        entry
            .tagged
            .clone()
            .unwrap_or_else(|| self.output_dir.join("corpus").join(format!("{}.conll", entry.name)))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.output_dir.join("vocab.txt")
    }

    pub fn norm_cfgs(&self) -> Vec<NormalizerConfig> {
        self.languages
            .iter()
            .map(|e| NormalizerConfig {
                lowercase: self.tokenizer.lowercase,
                strip_accents: e.strip_accents,
            })
            .collect()
    }

    pub fn language_names(&self) -> Vec<String> {
        self.languages.iter().map(|e| e.name.clone()).collect()
    }
}
