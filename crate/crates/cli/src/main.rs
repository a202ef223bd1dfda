use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use kgdial::metrics::render_ablation_table;
use kgdial_cli::chat::ChatSession;
use kgdial_cli::pipeline;
use kgdial_cli::{exit_code, EmbeddingKind, PipelineConfig, Variant};

#[derive(Debug, Parser)]
#[command(name = "kgdl", version, about = "Knowledge-grounded dialogue pipeline")]
struct Cli {
    /// JSON pipeline config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model variant, e.g. "S2S+Intent+JE+EL".
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    kvl: Option<Switch>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize the dataset and write vocabulary, KG and statistics.
    Preprocess,
    /// Build the co-occurrence and relation-strength matrices.
    Cooccur,
    /// Train word vectors for the variant (joint or GloVe).
    TrainEmbeddings,
    /// Train the variant's model and write its checkpoint.
    TrainModel,
    /// Score the variant's checkpoint with and without KVL.
    Evaluate {
        /// Score references against themselves instead of a model.
        #[arg(long)]
        sanity: bool,
    },
    /// Run every stage for all five variants and print the BLEU table.
    Ablate,
    /// Interactive chat with the variant's checkpoint.
    Chat,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    if let Some(k) = cli.kvl {
        cfg.kvl = matches!(k, Switch::On);
    }
    if let Some(out) = &cli.out {
        cfg.artifacts = out.clone();
    }
    cfg.resolve().context("invalid configuration")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Preprocess => {
            let summary = pipeline::preprocess(&cfg)?;
            write!(stdout, "{}", summary.render())?;
        }
        Command::Cooccur => {
            let s = pipeline::cooccur(&cfg)?;
            writeln!(
                stdout,
                "co-occurrence: {} nonzero pairs, total mass {}; relation strength: {} linked pairs from {} triples in context",
                s.nonzero, s.total_mass, s.linked_pairs, s.triples_in_context
            )?;
        }
        Command::TrainEmbeddings => {
            let kind = EmbeddingKind::of(cfg.variant);
            let e = cfg.embedding_config(kind == EmbeddingKind::Joint);
            writeln!(
                stdout,
                "{} embeddings: lambda={} dim={} epochs={} learning_rate={} optimizer={:?}",
                kind.name(),
                e.lambda,
                e.dim,
                e.epochs,
                e.learning_rate,
                e.optimizer
            )?;
            let outcome = pipeline::train_word_vectors(&cfg, kind)?;
            if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
                writeln!(stdout, "J {:.6} -> {:.6} over {} epochs", first.j, last.j, outcome.log.len())?;
            }
        }
        Command::TrainModel => {
            let outcome = pipeline::train_model(&cfg, cfg.variant)?;
            if let Some(last) = outcome.log.last() {
                writeln!(
                    stdout,
                    "{}: final loss {:.6} (vocab {:.6}, intent {:.6}, entity {:.6}), token acc {:.4}, intent acc {:.4}",
                    cfg.variant,
                    last.loss.total,
                    last.loss.vocab_loss,
                    last.loss.intent_loss,
                    last.loss.entity_loss,
                    last.token_acc,
                    last.intent_acc
                )?;
            }
        }
        Command::Evaluate { sanity: true } => {
            let r = pipeline::reference_sanity(&cfg)?;
            writeln!(stdout, "reference vs reference: BLEU {:.2} over {} pairs", r.bleu, r.examples)?;
        }
        Command::Evaluate { sanity: false } => {
            let out = pipeline::evaluate_variant(&cfg, cfg.variant)?;
            let p = &out.plain;
            writeln!(
                stdout,
                "{} on {} ({} pairs): BLEU {:.2}, embedding average {:.4}, vector extrema {:.4}, greedy matching {:.4}",
                cfg.variant,
                out.split.name(),
                p.examples,
                p.bleu,
                p.embedding_average,
                p.vector_extrema,
                p.greedy_matching
            )?;
            if let Some(k) = &out.kvl {
                writeln!(stdout, "with KVL: BLEU {:.2} ({} replacements)", k.bleu, k.kvl_replacements)?;
            }
        }
        Command::Ablate => {
            let rows = pipeline::ablate(&cfg)?;
            write!(stdout, "{}", render_ablation_table(&rows))?;
        }
        Command::Chat => {
            drop(stdout);
            let mut session = ChatSession::load(&cfg, cfg.variant)?;
            session.run(io::stdin().lock(), io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KGDL_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
