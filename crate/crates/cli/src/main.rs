//! `bd`: config-driven driver for the multilingual distillation experiments.

mod config;
mod evaluate;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use bd_core::corpus::{gen_synthetic, CorpusSet};
use bd_core::tokenizer::{train_wordpiece, CONTINUATION, SPECIALS};
use bd_core::training::{run_experiment, ExperimentSpec, Stage};

use config::JobConfig;

#[derive(Parser)]
#[command(
    name = "bd",
    about = "Multilingual masked-LM distillation at desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared WordPiece vocabulary and write vocab.txt
    TrainTokenizer {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate synthetic corpora and tagged files for every language
    GenSynthetic {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train teachers, HL baselines, and the distilled student
    RunExperiment {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated stage subset: teachers,hl,hl_balanced,student
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<Stage>>,
    },
    /// Compute MRR, balanced score, probe matrices, and hypothesis verdicts
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    check_thread_env()?;
    let cli = Cli::parse();
    match cli.command {
        Command::TrainTokenizer { config } => {
            let cfg = JobConfig::load(&config)?;
            with_marker(&cfg, "train-tokenizer", || train_tokenizer(&cfg))
        }
        Command::GenSynthetic { config } => {
            let cfg = JobConfig::load(&config)?;
            with_marker(&cfg, "gen-synthetic", || gen_synthetic_cmd(&cfg))
        }
        Command::RunExperiment { config, only } => {
            let cfg = JobConfig::load(&config)?;
            let stages = only.unwrap_or_else(|| Stage::ALL.to_vec());
            with_marker(&cfg, "run-experiment", || run_experiment_cmd(&cfg, stages))
        }
        Command::Evaluate { config } => {
            let cfg = JobConfig::load(&config)?;
            with_marker(&cfg, "evaluate", || evaluate::evaluate(&cfg))
        }
    }
}

/// Kernels are single-threaded; the env var is validated so configs stay
/// portable to multi-core setups.
fn check_thread_env() -> Result<()> {
    if let Ok(raw) = std::env::var("BD_THREADS") {
        let n: usize = raw
            .parse()
            .with_context(|| format!("BD_THREADS must be a positive integer, got {raw:?}"))?;
        if n == 0 {
            bail!("BD_THREADS must be at least 1");
        }
    }
    Ok(())
}

/// Drop a `.partial` marker in the output directory while a command runs;
/// it survives only if the command fails, flagging incomplete outputs.
fn with_marker(cfg: &JobConfig, command: &str, f: impl FnOnce() -> Result<()>) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    let marker = cfg.output_dir.join(".partial");
    std::fs::write(&marker, command)
        .with_context(|| format!("cannot write {}", marker.display()))?;
    f()?;
    std::fs::remove_file(&marker)
        .with_context(|| format!("cannot remove {}", marker.display()))?;
    Ok(())
}

fn load_corpus(cfg: &JobConfig) -> Result<CorpusSet> {
    let entries: Vec<(String, PathBuf)> =
        cfg.languages.iter().map(|e| (e.name.clone(), cfg.corpus_path(e))).collect();
    Ok(CorpusSet::load(&entries)?)
}

fn train_tokenizer(cfg: &JobConfig) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let vocab = train_wordpiece(&corpus, cfg.tokenizer.target_size, &cfg.norm_cfgs())?;
    let path = cfg.vocab_path();
    vocab.save(&path)?;

    let alphabet = vocab
        .tokens()
        .iter()
        .skip(SPECIALS.len())
        .filter(|t| t.strip_prefix(CONTINUATION).unwrap_or(t).chars().count() == 1)
        .count();
    let merges = vocab.len() - SPECIALS.len() - alphabet;
    println!("wrote {} ({} tokens: {} specials, {} alphabet, {} merged)",
        path.display(), vocab.len(), SPECIALS.len(), alphabet, merges);
    Ok(())
}

fn gen_synthetic_cmd(cfg: &JobConfig) -> Result<()> {
    let Some(synth) = &cfg.synthetic else {
        bail!("config has no `synthetic` section");
    };
    let (corpus, tagged) = gen_synthetic(
        &synth.specs,
        &synth.chars_per_lang,
        synth.tagged_sentences,
        synth.seed,
    )?;
    let dir = cfg.output_dir.join("corpus");
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (i, entry) in cfg.languages.iter().enumerate() {
        let sentences = corpus.lang_sentences(i).join("\n") + "\n";
        let path = cfg.corpus_path(entry);
        std::fs::write(&path, sentences)
            .with_context(|| format!("cannot write {}", path.display()))?;
        let path = cfg.tagged_path(entry);
        std::fs::write(&path, tagged[i].to_conll())
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!(
            "{}: {} chars, {} tagged sentences",
            entry.name,
            corpus.char_count(i),
            tagged[i].sentences.len()
        );
    }
    Ok(())
}

fn run_experiment_cmd(cfg: &JobConfig, stages: Vec<Stage>) -> Result<()> {
    let vocab_path = cfg.vocab_path();
    let vocab = bd_core::tokenizer::Vocab::load(&vocab_path)
        .with_context(|| format!("missing vocabulary {} (run train-tokenizer)", vocab_path.display()))?;
    let corpus = load_corpus(cfg)?;
    let norm_cfgs = cfg.norm_cfgs();
    let spec = ExperimentSpec {
        corpus: &corpus,
        vocab: &vocab,
        norm_cfgs: &norm_cfgs,
        model: cfg.model.to_config(vocab.len())?,
        plan: cfg.train.to_plan(),
        split_seed: cfg.split_seed,
        out_dir: &cfg.output_dir,
        stages,
    };
    let manifest = run_experiment(&spec)?;
    for record in &manifest.stages {
        println!(
            "{}: best dev loss {:.4} after {} epochs ({:.1}s) -> {}",
            record.stage,
            record.best_dev_loss,
            record.epochs_run,
            record.wall_secs,
            record.checkpoint.display()
        );
    }
    Ok(())
}
