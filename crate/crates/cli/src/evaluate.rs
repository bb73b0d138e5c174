//! The `evaluate` command: score every trained model, check the balanced
//! distillation hypotheses, and render the JSON report plus plain-text
//! summary tables.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};

use bd_core::corpus::{load_conll, CorpusSet, TaggedCorpus};
use bd_core::losses::MaskingConfig;
use bd_core::metrics::{
    compare_hypothesis, mrr, HypothesisPair, MeanStd, MetricsReport, ScoreTable, TransferMatrix,
};
use bd_core::model::MaskedLmModel;
use bd_core::probing::probe_matrix;
use bd_core::tokenizer::{NormalizerConfig, Vocab};
use bd_core::training::{stage_checkpoint_path, teacher_checkpoint_path, Stage};

use crate::config::JobConfig;

/// The probing task evaluated for zero-shot transfer.
const TRANSFER_TASK: &str = "tag";
const MULTILINGUAL_MODELS: [&str; 3] = ["hl", "hl_balanced", "student"];

pub fn evaluate(cfg: &JobConfig) -> Result<()> {
    let vocab = Vocab::load(&cfg.vocab_path())
        .with_context(|| format!("missing vocabulary {}", cfg.vocab_path().display()))?;
    let corpus = crate::load_corpus(cfg)?;
    let (_, _, test) = corpus.split(cfg.split_seed);
    let norm_cfgs = cfg.norm_cfgs();
    let langs = cfg.language_names();

    let load_model = |path: PathBuf| -> Result<MaskedLmModel> {
        bd_core::model::load(&path)
            .with_context(|| format!("missing or unreadable checkpoint {}", path.display()))
    };
    let mut teachers = Vec::new();
    for lang in &langs {
        teachers.push(load_model(teacher_checkpoint_path(&cfg.output_dir, lang))?);
    }
    let multis: Vec<(String, MaskedLmModel)> = [Stage::Hl, Stage::HlBalanced, Stage::Student]
        .into_iter()
        .map(|s| Ok((s.name().to_string(), load_model(stage_checkpoint_path(&cfg.output_dir, s, None))?)))
        .collect::<Result<_>>()?;

    // MRR per (model, language) on the held-out test split; the teacher of
    // each language provides that language's monolingual gold standard.
    let masking = MaskingConfig { rate: cfg.train.mask_rate, ..MaskingConfig::default() };
    let mut table = ScoreTable::default();
    let mut mrr_map: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (i, lang) in langs.iter().enumerate() {
        let mono = CorpusSet::from_sentences(
            vec![lang.clone()],
            vec![test.lang_sentences(i).to_vec()],
        )?;
        let mono_cfg: Vec<NormalizerConfig> = vec![norm_cfgs[i]];
        let score = |model: &MaskedLmModel| -> Result<f64> {
            Ok(mrr(model, &mono, &vocab, &mono_cfg, &masking, cfg.metrics.batch_size, cfg.metrics.eval_seed)?)
        };
        let gold = score(&teachers[i])?;
        table.insert_gold(lang, gold);
        mrr_map.entry(format!("teacher_{lang}")).or_default().insert(lang.clone(), gold);
        for (name, model) in &multis {
            let s = score(model)?;
            table.insert(name, lang, s);
            mrr_map.entry(name.clone()).or_default().insert(lang.clone(), s);
        }
    }
    let mut balanced = BTreeMap::new();
    for (name, _) in &multis {
        balanced.insert(name.clone(), table.balanced_score(name, &langs)?);
    }

    // Probe matrices: macro-F1 mean per (source, target); Z values for C_Z
    // come from the off-diagonal cells.
    let tagged: Vec<TaggedCorpus> = cfg
        .languages
        .iter()
        .map(|e| {
            let path = cfg.tagged_path(e);
            load_conll(&path, &e.name)
                .with_context(|| format!("missing tagged corpus {}", path.display()))
        })
        .collect::<Result<_>>()?;
    let probe_cfg = cfg.probe.to_config();

    type TransferTable = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, MeanStd>>>>;
    let mut transfer: TransferTable = BTreeMap::new();
    let mut cz = BTreeMap::new();
    let mut matrices = BTreeMap::new();
    for (name, model) in &multis {
        let matrix = probe_matrix(model, &tagged, &vocab, &norm_cfgs, &probe_cfg)?;
        let mut z = TransferMatrix::new();
        let mut cells: BTreeMap<String, BTreeMap<String, MeanStd>> = BTreeMap::new();
        for src in &langs {
            for tgt in &langs {
                let stats = &matrix.cells[src][tgt];
                cells.entry(src.clone()).or_default().insert(tgt.clone(), stats.macro_f1);
                if src != tgt {
                    z.insert(src, tgt, stats.macro_f1.mean)?;
                }
            }
        }
        cz.insert(name.clone(), z.avg_cross_lingual(&langs)?);
        transfer
            .entry(name.clone())
            .or_default()
            .insert(TRANSFER_TASK.to_string(), cells);
        matrices.insert(name.clone(), matrix);
    }

    let mut hypotheses = BTreeMap::new();
    for baseline in ["hl", "hl_balanced"] {
        let mut task_verdicts = BTreeMap::new();
        task_verdicts.insert(
            TRANSFER_TASK.to_string(),
            compare_hypothesis(cz[baseline], cz["student"]),
        );
        hypotheses.insert(
            format!("{baseline}_vs_student"),
            HypothesisPair {
                balanced: compare_hypothesis(balanced[baseline], balanced["student"]),
                transfer: task_verdicts,
            },
        );
    }

    let report = MetricsReport {
        models: MULTILINGUAL_MODELS.iter().map(|s| s.to_string()).collect(),
        mrr: mrr_map,
        balanced,
        transfer,
        hypotheses,
        config: serde_json::to_value(cfg)?,
        seeds: BTreeMap::from([
            ("split".to_string(), cfg.split_seed),
            ("train".to_string(), cfg.train.seed),
            ("eval".to_string(), cfg.metrics.eval_seed),
            ("probe".to_string(), cfg.probe.seed),
        ]),
    };
    let path = cfg.output_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());

    print!("{}", render_balanced_table(cfg, &report));
    for name in MULTILINGUAL_MODELS {
        print!("{}", render_probe_table(name, &langs, &matrices[name]));
    }
    Ok(())
}

/// Table-2-style summary: per-group balanced gap to the monolingual gold
/// standard, in MRR points (x100), one column per model.
fn render_balanced_table(cfg: &JobConfig, report: &MetricsReport) -> String {
    let groups: [(&str, Vec<String>); 3] = [
        ("Low-Res", cfg.metrics.low_res.clone()),
        ("High-Res", cfg.metrics.high_res.clone()),
        ("All", cfg.language_names()),
    ];
    let mut out = String::new();
    out.push_str("\nBalanced score B (MRR points x100 vs monolingual gold)\n");
    out.push_str(&format!("{:<10}", "Lang. Set"));
    for name in MULTILINGUAL_MODELS {
        out.push_str(&format!("{name:>14}"));
    }
    out.push('\n');
    for (label, group) in &groups {
        out.push_str(&format!("{label:<10}"));
        for name in MULTILINGUAL_MODELS {
            if group.is_empty() {
                out.push_str(&format!("{:>14}", "-"));
                continue;
            }
            let mean = group
                .iter()
                .map(|l| report.mrr[name][l] - report.mrr[&format!("teacher_{l}")][l])
                .sum::<f64>()
                / group.len() as f64;
            out.push_str(&format!("{:>14.2}", mean * 100.0));
        }
        out.push('\n');
    }
    out
}

/// Table-3-style matrix: probe macro-F1 mean +/- std, sources as rows and
/// evaluation languages as columns.
fn render_probe_table(
    model: &str,
    langs: &[String],
    matrix: &bd_core::probing::ProbeMatrix,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("\nProbe transfer (macro-F1), model {model}\n"));
    out.push_str(&format!("{:<10}", "train\\eval"));
    for tgt in langs {
        out.push_str(&format!("{tgt:>16}"));
    }
    out.push('\n');
    for src in langs {
        out.push_str(&format!("{src:<10}"));
        for tgt in langs {
            let s = &matrix.cells[src][tgt].macro_f1;
            out.push_str(&format!("{:>10.3}±{:.3}", s.mean, s.std));
        }
        out.push('\n');
    }
    out
}
