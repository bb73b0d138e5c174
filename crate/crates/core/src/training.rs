//! Training orchestration: hard-label runs (teachers, HL, HL-balanced),
//! teacher-student distillation, and the full experiment driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{fnv1a, make_batches, CorpusError, CorpusSet};
use crate::losses::{hard_loss, soft_loss, LossError, MaskedBatch, MaskingConfig, SoftTarget};
use crate::model::{ForwardMode, MaskedLmModel, ModelConfig, ModelError};
use crate::tensor::{AdamConfig, OptimizerState, ParamSet, Tape, TensorError};
use crate::tokenizer::{NormalizerConfig, Vocab};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus/mode mismatch: {reason}")]
    ModeMismatch { reason: String },
    #[error("no teacher registered for language `{lang}`")]
    MissingTeacher { lang: String },
    #[error("teacher for `{lang}` has vocab size {teacher}, student has {student}")]
    VocabMismatch { lang: String, teacher: usize, student: usize },
    #[error("training corpus produced no batches")]
    NoBatches,
    #[error("experiment stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<TrainError> },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Teacher,
    Hl,
    HlBalanced,
    Student,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainPlan {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f32,
    pub patience: usize,
    pub seed: u64,
    /// Weight on the hard loss during distillation; 0 means pure soft labels.
    pub alpha: f32,
    /// Softmax temperature applied to both teacher and student logits.
    pub temperature: f32,
    pub masking: MaskingConfig,
}

impl TrainPlan {
    pub fn new(mode: TrainMode, seed: u64) -> Self {
        Self {
            mode,
            epochs: 10,
            batch_size: 8,
            base_lr: 5e-5,
            patience: 2,
            seed,
            alpha: 0.0,
            temperature: 1.0,
            masking: MaskingConfig::default(),
        }
    }
}

/// Map language id -> frozen monolingual teacher sharing the student vocab.
#[derive(Default)]
pub struct TeacherRegistry {
    teachers: BTreeMap<String, MaskedLmModel>,
}

impl TeacherRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lang: impl Into<String>, model: MaskedLmModel) {
        self.teachers.insert(lang.into(), model);
    }

    pub fn get(&self, lang: &str) -> Option<&MaskedLmModel> {
        self.teachers.get(lang)
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    fn check_coverage(&self, corpus: &CorpusSet, student: &MaskedLmModel) -> Result<(), TrainError> {
        for lang in corpus.languages() {
            let teacher = self
                .teachers
                .get(lang)
                .ok_or_else(|| TrainError::MissingTeacher { lang: lang.clone() })?;
            if teacher.config().vocab_size != student.config().vocab_size {
                return Err(TrainError::VocabMismatch {
                    lang: lang.clone(),
                    teacher: teacher.config().vocab_size,
                    student: student.config().vocab_size,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub total_steps: usize,
    pub steps_run: usize,
}

/// Everything a single training job consumes.
pub struct TrainData<'a> {
    pub train: &'a CorpusSet,
    pub dev: &'a CorpusSet,
    pub vocab: &'a Vocab,
    pub norm_cfgs: &'a [NormalizerConfig],
}

fn derive_seed(base: u64, label: &str) -> u64 {
    fnv1a(base ^ 0x5bd1_e995_1b87_3593, label.as_bytes())
}

fn epoch_rng(seed: u64, label: &str, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{label}:{epoch}")))
}

fn is_balanced(corpus: &CorpusSet) -> bool {
    let counts = corpus.char_counts();
    let (min, max) = (counts.iter().min().copied().unwrap_or(0), counts.iter().max().copied().unwrap_or(0));
    let longest = corpus
        .sentences()
        .iter()
        .flatten()
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(0);
    max - min <= longest
}

/// Loss on a fixed dev set, masking seeded independently of the epoch so the
/// number is comparable across epochs. Teachers (if given) provide soft targets.
fn dev_loss(
    model: &MaskedLmModel,
    data: &TrainData,
    plan: &TrainPlan,
    teachers: Option<&TeacherRegistry>,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, "dev-masking"));
    let (batches, _) = make_batches(
        data.dev,
        data.vocab,
        data.norm_cfgs,
        plan.batch_size,
        model.config().max_seq_len,
        &plan.masking,
        &mut rng,
    );
    if batches.is_empty() {
        return Err(TrainError::NoBatches);
    }
    let mut total = 0.0f64;
    let mut n = 0usize;
    for batch in &batches {
        let mut tape = Tape::<f32>::inference();
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
        let loss = match teachers {
            None => hard_loss(&mut tape, logits, &batch.golds)?,
            Some(reg) => {
                let lang = &data.dev.languages()[batch.lang];
                let teacher =
                    reg.get(lang).ok_or_else(|| TrainError::MissingTeacher { lang: lang.clone() })?;
                let target = teacher_targets(teacher, batch, plan.temperature)?;
                let scaled = tape.scale(logits, 1.0 / plan.temperature as f64)?;
                soft_loss(&mut tape, scaled, &target)?
            }
        };
        total += tape.value(loss).item() as f64;
        n += 1;
    }
    Ok(total / n as f64)
}

/// Teacher softmax rows at the batch's masked positions (inference mode).
fn teacher_targets(
    teacher: &MaskedLmModel,
    batch: &MaskedBatch,
    temperature: f32,
) -> Result<SoftTarget, TrainError> {
    let mut tape = Tape::<f32>::inference();
    let mut mode = ForwardMode::Eval;
    let logits = teacher.forward_mlm(
        &mut tape,
        teacher.params(),
        &batch.token_ids,
        batch.rows,
        batch.seq_len,
        &batch.masks,
        &mut mode,
    )?;
    let scaled = tape.scale(logits, 1.0 / temperature as f64)?;
    let probs = tape.softmax_last(scaled)?;
    Ok(SoftTarget::new(tape.value(probs).clone())?)
}

struct Loop<'a> {
    model: &'a mut MaskedLmModel,
    data: &'a TrainData<'a>,
    plan: &'a TrainPlan,
    teachers: Option<&'a TeacherRegistry>,
    lr: f32,
}

impl Loop<'_> {
    fn run(mut self) -> Result<TrainHistory, TrainError> {
        // Batch count per epoch is constant (encoding is deterministic, only
        // order and masking vary), so the lr schedule can be fixed up front.
        let probe = make_batches(
            self.data.train,
            self.data.vocab,
            self.data.norm_cfgs,
            self.plan.batch_size,
            self.model.config().max_seq_len,
            &self.plan.masking,
            &mut epoch_rng(self.plan.seed, "train", 0),
        )
        .0;
        if probe.is_empty() {
            return Err(TrainError::NoBatches);
        }
        let steps_per_epoch = probe.len();
        let total_steps = self.plan.epochs * steps_per_epoch;
        let mut opt =
            OptimizerState::new(AdamConfig::new(self.lr, total_steps), self.model.params());

        let mut history = Vec::new();
        let mut best: Option<(usize, f64, ParamSet<f32>)> = None;
        let mut since_best = 0usize;
        let mut steps_run = 0usize;

        for epoch in 0..self.plan.epochs {
            let mut rng = epoch_rng(self.plan.seed, "train", epoch);
            let (batches, _) = make_batches(
                self.data.train,
                self.data.vocab,
                self.data.norm_cfgs,
                self.plan.batch_size,
                self.model.config().max_seq_len,
                &self.plan.masking,
                &mut rng,
            );
            let mut mode = ForwardMode::train(derive_seed(self.plan.seed, &format!("dropout:{epoch}")));
            let mut epoch_loss = 0.0f64;
            for batch in &batches {
                epoch_loss += self.step(batch, &mut opt, &mut mode)?;
                steps_run += 1;
            }
            let train_loss = epoch_loss / batches.len() as f64;
            let dev = dev_loss(self.model, self.data, self.plan, self.teachers)?;
            history.push(EpochStats { epoch, train_loss, dev_loss: dev });

            let improved = best.as_ref().map_or(true, |(_, b, _)| dev < *b);
            if improved {
                best = Some((epoch, dev, self.model.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= self.plan.patience {
                    break;
                }
            }
        }

        let (best_epoch, best_dev_loss, best_params) = best.expect("at least one epoch ran");
        *self.model.params_mut() = best_params;
        Ok(TrainHistory { epochs: history, best_epoch, best_dev_loss, total_steps, steps_run })
    }

    fn step(
        &mut self,
        batch: &MaskedBatch,
        opt: &mut OptimizerState,
        mode: &mut ForwardMode,
    ) -> Result<f64, TrainError> {
        let mut tape = Tape::<f32>::new();
        let logits = self.model.forward_mlm(
            &mut tape,
            self.model.params(),
            &batch.token_ids,
            batch.rows,
            batch.seq_len,
            &batch.masks,
            mode,
        )?;
        let loss = match self.teachers {
            None => hard_loss(&mut tape, logits, &batch.golds)?,
            Some(reg) => {
                let lang = &self.data.train.languages()[batch.lang];
                let teacher =
                    reg.get(lang).ok_or_else(|| TrainError::MissingTeacher { lang: lang.clone() })?;
                let target = teacher_targets(teacher, batch, self.plan.temperature)?;
                let scaled = tape.scale(logits, 1.0 / self.plan.temperature as f64)?;
                let soft = soft_loss(&mut tape, scaled, &target)?;
                if self.plan.alpha > 0.0 {
                    let hard = hard_loss(&mut tape, logits, &batch.golds)?;
                    let soft_part = tape.scale(soft, (1.0 - self.plan.alpha) as f64)?;
                    let hard_part = tape.scale(hard, self.plan.alpha as f64)?;
                    tape.add(soft_part, hard_part)?
                } else {
                    soft
                }
            }
        };
        let value = tape.value(loss).item() as f64;
        tape.backward(loss)?;
        tape.export_param_grads(self.model.params_mut());
        opt.adam_step(self.model.params_mut())?;
        Ok(value)
    }
}

/// Hard-label training for teacher, HL, and HL-balanced runs. Optimizes
/// cross-entropy with Adam and linear lr decay, early-stops on the dev set,
/// and restores the best-dev checkpoint.
pub fn train_hard(
    model: &mut MaskedLmModel,
    data: &TrainData,
    plan: &TrainPlan,
) -> Result<TrainHistory, TrainError> {
    match plan.mode {
        TrainMode::Teacher => {
            if data.train.languages().len() != 1 {
                return Err(TrainError::ModeMismatch {
                    reason: format!(
                        "teacher mode requires a single language, got {}",
                        data.train.languages().len()
                    ),
                });
            }
        }
        TrainMode::Hl => {}
        TrainMode::HlBalanced => {
            if !is_balanced(data.train) {
                return Err(TrainError::ModeMismatch {
                    reason: "hl_balanced mode requires a balanced corpus".into(),
                });
            }
        }
        TrainMode::Student => {
            return Err(TrainError::ModeMismatch {
                reason: "student mode trains via distill, not train_hard".into(),
            })
        }
    }
    Loop { model, data, plan, teachers: None, lr: plan.base_lr }.run()
}

/// Teacher-student distillation on a balanced corpus. Teachers are frozen;
/// the student optimizes the soft loss (mixed with the hard loss when
/// `alpha > 0`). For the monolingual K=1 study the learning rate is 5x.
pub fn distill(
    student: &mut MaskedLmModel,
    teachers: &TeacherRegistry,
    data: &TrainData,
    plan: &TrainPlan,
) -> Result<TrainHistory, TrainError> {
    if plan.mode != TrainMode::Student {
        return Err(TrainError::ModeMismatch { reason: "distill requires mode=student".into() });
    }
    if !is_balanced(data.train) {
        return Err(TrainError::ModeMismatch {
            reason: "student mode requires a balanced corpus".into(),
        });
    }
    teachers.check_coverage(data.train, student)?;
    let k = data.train.languages().len();
    let lr = if k == 1 { plan.base_lr * 5.0 } else { plan.base_lr };
    Loop { model: student, data, plan, teachers: Some(teachers), lr }.run()
}

// ── experiment driver ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Teachers,
    Hl,
    HlBalanced,
    Student,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Teachers, Stage::Hl, Stage::HlBalanced, Stage::Student];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Teachers => "teachers",
            Stage::Hl => "hl",
            Stage::HlBalanced => "hl_balanced",
            Stage::Student => "student",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "teachers" => Ok(Stage::Teachers),
            "hl" => Ok(Stage::Hl),
            "hl_balanced" | "hl-balanced" => Ok(Stage::HlBalanced),
            "student" => Ok(Stage::Student),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

pub struct ExperimentSpec<'a> {
    pub corpus: &'a CorpusSet,
    pub vocab: &'a Vocab,
    pub norm_cfgs: &'a [NormalizerConfig],
    /// Architecture template; per-stage seeds are derived from `plan.seed`.
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub split_seed: u64,
    pub out_dir: &'a Path,
    /// Stages to (re)train; others are loaded from existing checkpoints
    /// when later stages need them.
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub checkpoint: PathBuf,
    pub model_seed: u64,
    pub train_seed: u64,
    pub corpus_hash: String,
    pub wall_secs: f64,
    pub best_dev_loss: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub languages: Vec<String>,
    pub stages: Vec<StageRecord>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.display().to_string(), source }
}

fn stage_err<T>(stage: &str, r: Result<T, TrainError>) -> Result<T, TrainError> {
    r.map_err(|source| TrainError::Stage { stage: stage.to_string(), source: Box::new(source) })
}

fn single_language(corpus: &CorpusSet, idx: usize) -> CorpusSet {
    CorpusSet::from_sentences(
        vec![corpus.languages()[idx].clone()],
        vec![corpus.lang_sentences(idx).to_vec()],
    )
    .expect("slice of a valid corpus")
}

pub fn teacher_checkpoint_path(out_dir: &Path, lang: &str) -> PathBuf {
    out_dir.join(format!("teacher_{lang}.ckpt"))
}

pub fn stage_checkpoint_path(out_dir: &Path, stage: Stage, lang: Option<&str>) -> PathBuf {
    match stage {
        Stage::Teachers => teacher_checkpoint_path(out_dir, lang.expect("teacher language")),
        other => out_dir.join(format!("{}.ckpt", other.name())),
    }
}

/// Train every requested stage: one teacher per language on its full data,
/// HL on all data, HL-balanced and the distilled student on the balanced
/// corpus. Writes checkpoints plus a manifest and returns the manifest.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentManifest, TrainError> {
    std::fs::create_dir_all(spec.out_dir).map_err(io_err(spec.out_dir))?;
    let (train, dev, _test) = spec.corpus.split(spec.split_seed);
    let mut balance_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.plan.seed, "balance"));
    let balanced_train = train.balance(&mut balance_rng)?;
    let mut dev_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.plan.seed, "balance-dev"));
    let balanced_dev = dev.balance(&mut dev_rng)?;

    let langs = spec.corpus.languages().to_vec();
    let mut records = Vec::new();
    let wants = |s: Stage| spec.stages.contains(&s);

    let mut run_stage = |label: String,
                         mode: TrainMode,
                         train_c: &CorpusSet,
                         dev_c: &CorpusSet,
                         norm_cfgs: &[NormalizerConfig],
                         path: &Path,
                         teachers: Option<&TeacherRegistry>|
     -> Result<MaskedLmModel, TrainError> {
        let model_seed = derive_seed(spec.plan.seed, &format!("model:{label}"));
        let train_seed = derive_seed(spec.plan.seed, &format!("train:{label}"));
        let mut config = spec.model.clone();
        config.seed = model_seed;
        let mut model = MaskedLmModel::init(config)?;
        let mut plan = spec.plan.clone();
        plan.mode = mode;
        plan.seed = train_seed;
        let data = TrainData { train: train_c, dev: dev_c, vocab: spec.vocab, norm_cfgs };
        let started = Instant::now();
        let history = match teachers {
            None => train_hard(&mut model, &data, &plan)?,
            Some(reg) => distill(&mut model, reg, &data, &plan)?,
        };
        crate::model::save(&model, path)?;
        records.push(StageRecord {
            stage: label,
            checkpoint: path.to_path_buf(),
            model_seed,
            train_seed,
            corpus_hash: format!("{:016x}", train_c.content_hash()),
            wall_secs: started.elapsed().as_secs_f64(),
            best_dev_loss: history.best_dev_loss,
            epochs_run: history.epochs.len(),
        });
        Ok(model)
    };

    // Teachers: train or reuse; the student stage needs all of them.
    let mut registry = TeacherRegistry::new();
    let need_teachers = wants(Stage::Teachers) || wants(Stage::Student);
    if need_teachers {
        for (i, lang) in langs.iter().enumerate() {
            let path = teacher_checkpoint_path(spec.out_dir, lang);
            let model = if wants(Stage::Teachers) {
                let t_train = single_language(&train, i);
                let t_dev = single_language(&dev, i);
                let cfgs = vec![spec.norm_cfgs[i]];
                stage_err(
                    &format!("teacher:{lang}"),
                    run_stage(
                        format!("teacher:{lang}"),
                        TrainMode::Teacher,
                        &t_train,
                        &t_dev,
                        &cfgs,
                        &path,
                        None,
                    ),
                )?
            } else {
                stage_err(&format!("teacher:{lang}"), crate::model::load(&path).map_err(Into::into))?
            };
            registry.insert(lang.clone(), model);
        }
    }

    if wants(Stage::Hl) {
        let path = stage_checkpoint_path(spec.out_dir, Stage::Hl, None);
        stage_err(
            "hl",
            run_stage("hl".into(), TrainMode::Hl, &train, &balanced_dev, spec.norm_cfgs, &path, None),
        )?;
    }
    if wants(Stage::HlBalanced) {
        let path = stage_checkpoint_path(spec.out_dir, Stage::HlBalanced, None);
        stage_err(
            "hl_balanced",
            run_stage(
                "hl_balanced".into(),
                TrainMode::HlBalanced,
                &balanced_train,
                &balanced_dev,
                spec.norm_cfgs,
                &path,
                None,
            ),
        )?;
    }
    if wants(Stage::Student) {
        let path = stage_checkpoint_path(spec.out_dir, Stage::Student, None);
        stage_err(
            "student",
            run_stage(
                "student".into(),
                TrainMode::Student,
                &balanced_train,
                &balanced_dev,
                spec.norm_cfgs,
                &path,
                Some(&registry),
            ),
        )?;
    }

    let manifest = ExperimentManifest { languages: langs, stages: records };
    let manifest_path = spec.out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SyntheticLangSpec};
    use crate::tokenizer::train_wordpiece;

    fn tiny_world() -> (CorpusSet, Vocab, Vec<NormalizerConfig>) {
        let specs = vec![SyntheticLangSpec {
            name: "a".into(),
            vocab_size: 30,
            zipf_exponent: 1.1,
            bigram_seed: 0,
            script_offset: 0x61,
            cognate_fraction: 0.0,
            tag_arity: 3,
        }];
        let (corpus, _) = gen_synthetic(&specs, &[4_000], 0, 5).unwrap();
        let cfgs = vec![NormalizerConfig::default()];
        let vocab = train_wordpiece(&corpus, 80, &cfgs).unwrap();
        (corpus, vocab, cfgs)
    }

    fn tiny_model(vocab: &Vocab, seed: u64) -> MaskedLmModel {
        let mut cfg = ModelConfig::desk(vocab.len(), seed);
        cfg.num_layers = 1;
        cfg.hidden_dim = 32;
        cfg.ffn_dim = 64;
        cfg.max_seq_len = 48;
        cfg.dropout_rate = 0.0;
        MaskedLmModel::init(cfg).unwrap()
    }

    fn tiny_plan(mode: TrainMode, epochs: usize) -> TrainPlan {
        let mut plan = TrainPlan::new(mode, 17);
        plan.epochs = epochs;
        plan.base_lr = 2e-3;
        plan.patience = usize::MAX; // no early stop in these tests
        plan
    }

    #[test]
    fn hard_training_reduces_loss_and_is_deterministic() {
        let (corpus, vocab, cfgs) = tiny_world();
        let (train, dev, _) = corpus.split(3);
        let data = TrainData { train: &train, dev: &dev, vocab: &vocab, norm_cfgs: &cfgs };
        let plan = tiny_plan(TrainMode::Teacher, 3);

        let mut m1 = tiny_model(&vocab, 1);
        let h1 = train_hard(&mut m1, &data, &plan).unwrap();
        assert!(
            h1.epochs.last().unwrap().train_loss < h1.epochs[0].train_loss,
            "loss should fall on an overfit-scale corpus: {:?}",
            h1.epochs
        );

        let mut m2 = tiny_model(&vocab, 1);
        let h2 = train_hard(&mut m2, &data, &plan).unwrap();
        for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.dev_loss, b.dev_loss);
        }
        for ((_, a), (_, b)) in m1.params().iter().zip(m2.params().iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn early_stopping_restores_best_checkpoint() {
        let (corpus, vocab, cfgs) = tiny_world();
        let (train, dev, _) = corpus.split(3);
        let data = TrainData { train: &train, dev: &dev, vocab: &vocab, norm_cfgs: &cfgs };
        let mut plan = tiny_plan(TrainMode::Teacher, 8);
        plan.patience = 2;
        let mut model = tiny_model(&vocab, 2);
        let history = train_hard(&mut model, &data, &plan).unwrap();
        let best = history.best_dev_loss;
        for e in &history.epochs {
            assert!(best <= e.dev_loss + 1e-12);
        }
        assert_eq!(history.epochs[history.best_epoch].dev_loss, best);
    }

    #[test]
    fn self_distillation_starts_at_zero_loss() {
        let (corpus, vocab, cfgs) = tiny_world();
        let (train, dev, _) = corpus.split(3);
        let data = TrainData { train: &train, dev: &dev, vocab: &vocab, norm_cfgs: &cfgs };
        let student = tiny_model(&vocab, 4);
        let mut registry = TeacherRegistry::new();
        registry.insert("a", student.clone());
        // teacher == student initial weights -> KL(teacher || student) ~ 0
        let plan = tiny_plan(TrainMode::Student, 1);
        let dev0 = dev_loss(&student, &data, &plan, Some(&registry)).unwrap();
        assert!(dev0.abs() <= 1e-5, "self-KL should vanish, got {dev0}");
    }

    #[test]
    fn distillation_freezes_teachers_and_matches_hard_loss_for_one_hot() {
        let (corpus, vocab, cfgs) = tiny_world();
        let (train, dev, _) = corpus.split(3);
        let data = TrainData { train: &train, dev: &dev, vocab: &vocab, norm_cfgs: &cfgs };

        let mut teacher = tiny_model(&vocab, 5);
        let tplan = tiny_plan(TrainMode::Teacher, 2);
        train_hard(&mut teacher, &data, &tplan).unwrap();
        let teacher_bytes: Vec<Vec<f32>> =
            teacher.params().iter().map(|(_, p)| p.value.data().to_vec()).collect();

        let mut registry = TeacherRegistry::new();
        registry.insert("a", teacher);
        let mut student = tiny_model(&vocab, 6);
        let plan = tiny_plan(TrainMode::Student, 2);
        distill(&mut student, &registry, &data, &plan).unwrap();

        let after: Vec<Vec<f32>> = registry
            .get("a")
            .unwrap()
            .params()
            .iter()
            .map(|(_, p)| p.value.data().to_vec())
            .collect();
        assert_eq!(teacher_bytes, after, "teacher must stay frozen");
    }

    #[test]
    fn distill_rejects_missing_teacher_and_wrong_mode() {
        let (corpus, vocab, cfgs) = tiny_world();
        let (train, dev, _) = corpus.split(3);
        let data = TrainData { train: &train, dev: &dev, vocab: &vocab, norm_cfgs: &cfgs };
        let mut student = tiny_model(&vocab, 7);
        let registry = TeacherRegistry::new();
        let plan = tiny_plan(TrainMode::Student, 1);
        let err = distill(&mut student, &registry, &data, &plan).unwrap_err();
        assert!(err.to_string().contains('a'), "error should name the language: {err}");

        let bad_plan = tiny_plan(TrainMode::Hl, 1);
        assert!(distill(&mut student, &registry, &data, &bad_plan).is_err());
        assert!(train_hard(&mut student, &data, &tiny_plan(TrainMode::Student, 1)).is_err());
    }
}
