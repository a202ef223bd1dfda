//! The pipeline stages behind each subcommand. Every stage reads its inputs
//! from the artifact directory and writes its outputs back there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::ControlFlow;

use anyhow::{bail, Context};
use kgdial::cooccur::{build_cooccurrence, build_relation_strength};
use kgdial::corpus::{build_all_pairs, build_vocabulary, load_dataset, DatasetStats};
use kgdial::jointembed::{train_embeddings, train_glove, EmbedTrainOutcome};
use kgdial::metrics::{
    evaluate, reference_tokens, render_ablation_table, score_responses, AblationRow, EvalOptions, WordVectors,
};
use kgdial::neural::{load_checkpoint, save_checkpoint, train_with, write_train_log, EntityIndex, TrainOutcome};
use kgdial::{
    Dialogue, EmbeddingMatrix, EntityRegistry, EvaluationReport, IntentSet, KnowledgeGraph, ModelParams, Tokenizer,
    TrainingPair, Vocabulary,
};
use log::info;
use serde::{Deserialize, Serialize};

use crate::artifacts::{write_file, write_json, Artifacts, EmbeddingKind, Split};
use crate::config::{PipelineConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub splits: BTreeMap<String, DatasetStats>,
    pub global_entities: usize,
    pub global_triples: usize,
    pub vocab_size: usize,
    pub tokenizer_fingerprint: String,
}

impl PreprocessSummary {
    /// Per-split dialogue counts and KG sizes as a plain-text table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<6} {:>9} {:>7} {:>10} {:>12} {:>10} {:>8} {:>8}",
            "split", "dialogues", "pairs", "utterances", "utt/dialogue", "tok/utt", "entities", "triples"
        )
        .unwrap();
        for split in Split::ALL {
            if let Some(s) = self.splits.get(split.name()) {
                writeln!(
                    out,
                    "{:<6} {:>9} {:>7} {:>10} {:>12.2} {:>10.2} {:>8} {:>8}",
                    split.name(),
                    s.dialogues,
                    s.pairs,
                    s.utterances,
                    s.avg_utterances_per_dialogue,
                    s.avg_tokens_per_utterance,
                    s.entities,
                    s.triples
                )
                .unwrap();
            }
        }
        writeln!(
            out,
            "global KG: {} entities, {} triples; vocabulary: {} tokens",
            self.global_entities, self.global_triples, self.vocab_size
        )
        .unwrap();
        out
    }
}

/// Loads every configured split, builds the global KG and the vocabulary
/// (training tokens plus all KG entities) and persists them.
pub fn preprocess(cfg: &PipelineConfig) -> anyhow::Result<PreprocessSummary> {
    let art = Artifacts::new(&cfg.artifacts);
    let mut loaded: Vec<(Split, Vec<Dialogue>, KnowledgeGraph)> = Vec::new();
    for (split, path) in [
        (Split::Train, Some(&cfg.data.train)),
        (Split::Dev, cfg.data.dev.as_ref()),
        (Split::Test, cfg.data.test.as_ref()),
    ] {
        let Some(path) = path else { continue };
        let (dialogues, kg) = load_dataset(path).with_context(|| format!("loading {} split", split.name()))?;
        info!("{}: {} dialogues from {}", split.name(), dialogues.len(), path.display());
        loaded.push((split, dialogues, kg));
    }
    let mut global = KnowledgeGraph::new();
    for (_, _, kg) in &loaded {
        global.extend_from(kg);
    }
    let (_, train, train_kg) = &loaded[0];
    let vocab = build_vocabulary(train, &global, cfg.min_count)?;
    let tokenizer_fingerprint = Tokenizer::new(train_kg.entities().iter().cloned()).fingerprint();

    art.ensure_dir()?;
    write_file(&art.vocab(), |w| vocab.write_tsv(w))?;
    write_json(&art.kg_json(), &global)?;
    write_file(&art.kg_tsv(), |w| global.write_tsv(w))?;
    for split in Split::ALL {
        let path = art.dialogues(split);
        match loaded.iter().find(|(s, _, _)| *s == split) {
            Some((_, dialogues, _)) => write_file(&path, |w| {
                for d in dialogues {
                    serde_json::to_writer(&mut *w, d)?;
                    writeln!(w)?;
                }
                Ok(())
            })?,
            None if path.exists() => {
                std::fs::remove_file(&path).with_context(|| format!("removing stale {}", path.display()))?
            }
            None => {}
        }
    }
    let summary = PreprocessSummary {
        splits: loaded
            .iter()
            .map(|(s, d, kg)| (s.name().to_string(), DatasetStats::compute(d, kg)))
            .collect(),
        global_entities: global.entities().len(),
        global_triples: global.len(),
        vocab_size: vocab.len(),
        tokenizer_fingerprint,
    };
    write_json(&art.stats(), &summary)?;
    Ok(summary)
}

fn tokenizer_fingerprint(art: &Artifacts) -> anyhow::Result<String> {
    let r = art.open(&art.stats(), "preprocess")?;
    let s: PreprocessSummary = serde_json::from_reader(r).context("reading stats.json")?;
    Ok(s.tokenizer_fingerprint)
}

/// Training pairs of the training split.
fn train_pairs(art: &Artifacts, vocab: &Vocabulary) -> anyhow::Result<Vec<TrainingPair>> {
    let dialogues = art.load_dialogues(Split::Train)?.expect("train split is required");
    Ok(build_all_pairs(&dialogues, vocab))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CooccurSummary {
    pub nonzero: usize,
    pub total_mass: f64,
    pub linked_pairs: usize,
    pub triples_in_context: usize,
}

/// Co-occurrence counts over training pairs and the relation-strength
/// matrix over the global KG.
pub fn cooccur(cfg: &PipelineConfig) -> anyhow::Result<CooccurSummary> {
    let art = Artifacts::new(&cfg.artifacts);
    let vocab = art.load_vocab()?;
    let kg = art.load_kg()?;
    let pairs = train_pairs(&art, &vocab)?;
    let c = &cfg.cooccur;
    let x = build_cooccurrence(&pairs, &vocab, c.window, c.weighting)?;
    let r = build_relation_strength(&kg, &vocab, &x, c.relation_mode)?;
    write_file(&art.cooccur(), |w| x.write_text(w))?;
    write_file(&art.relation(), |w| r.write_text(w))?;
    let summary = CooccurSummary {
        nonzero: x.counts.nnz_upper(),
        total_mass: x.counts.total_mass(),
        linked_pairs: r.strength.nnz_upper(),
        triples_in_context: r.triples_in_context,
    };
    info!(
        "co-occurrence: {} nonzero pairs; relation strength: {} linked pairs",
        summary.nonzero, summary.linked_pairs
    );
    Ok(summary)
}

/// Trains word vectors: joint text/KG embeddings, or plain GloVe.
pub fn train_word_vectors(cfg: &PipelineConfig, kind: EmbeddingKind) -> anyhow::Result<EmbedTrainOutcome> {
    let art = Artifacts::new(&cfg.artifacts);
    let vocab = art.load_vocab()?;
    let x = art.load_cooccur()?;
    if x.dim() != vocab.len() {
        bail!("co-occurrence dimension {} does not match vocabulary size {}", x.dim(), vocab.len());
    }
    let ecfg = cfg.embedding_config(kind == EmbeddingKind::Joint);
    info!(
        "{} embeddings: lambda={} d={} epochs={} lr={}",
        kind.name(),
        ecfg.lambda,
        ecfg.dim,
        ecfg.epochs,
        ecfg.learning_rate
    );
    let outcome = match kind {
        EmbeddingKind::Joint => train_embeddings(&x, &art.load_relation()?, &ecfg)?,
        EmbeddingKind::Glove => train_glove(&x, &ecfg)?,
    };
    write_file(&art.embeddings(kind), |w| outcome.embeddings.write_text(&vocab, w))?;
    write_file(&art.biases(kind), |w| outcome.embeddings.write_biases(&vocab, w))?;
    write_file(&art.embedding_log(kind), |w| outcome.write_log_csv(w))?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        info!("J: {:.6} -> {:.6}", first.j, last.j);
    }
    Ok(outcome)
}

/// Trains the variant's model on the training split, with its loss terms
/// masked, starting from its pretrained word vectors.
pub fn train_model(cfg: &PipelineConfig, variant: Variant) -> anyhow::Result<TrainOutcome> {
    let art = Artifacts::new(&cfg.artifacts);
    let vocab = art.load_vocab()?;
    let kind = EmbeddingKind::of(variant);
    let embeddings = art.load_embeddings(kind, &vocab)?;
    let pairs = train_pairs(&art, &vocab)?;
    let tcfg = cfg.model_config(variant);
    let n_intents = IntentSet::in_car().len();
    let params = ModelParams::new(&embeddings, n_intents, tcfg.seed)?;
    let entities = EntityIndex::from_vocab(&vocab);
    info!(
        "training {variant}: {} pairs, |V|={}, d={}, epochs={}, batch={}",
        pairs.len(),
        vocab.len(),
        params.dim,
        tcfg.epochs,
        tcfg.batch_size
    );
    let outcome = train_with(params, &pairs, &entities, &tcfg, |r| {
        if r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == tcfg.epochs {
            info!(
                "epoch {}: total {:.5} (vocab {:.5}, intent {:.5}, entity {:.5}) token acc {:.4} intent acc {:.4}",
                r.epoch,
                r.loss.total,
                r.loss.vocab_loss,
                r.loss.intent_loss,
                r.loss.entity_loss,
                r.token_acc,
                r.intent_acc
            );
        }
        ControlFlow::Continue(())
    })?;
    let metadata = serde_json::json!({
        "variant": variant.tag(),
        "embeddings": kind.name(),
        "train_config": tcfg,
        "config_fingerprint": cfg.fingerprint(),
        "tokenizer_fingerprint": tokenizer_fingerprint(&art)?,
    });
    save_checkpoint(&art.model(variant), &outcome.params, metadata)?;
    write_file(&art.train_log(variant), |w| write_train_log(&outcome.log, w))?;
    Ok(outcome)
}

/// The split used for evaluation: test, else dev, else train.
pub fn evaluation_split(art: &Artifacts) -> anyhow::Result<(Split, Vec<Dialogue>)> {
    for split in [Split::Test, Split::Dev, Split::Train] {
        if let Some(d) = art.load_dialogues(split)? {
            return Ok((split, d));
        }
    }
    unreachable!("train split is required")
}

pub fn load_model(art: &Artifacts, variant: Variant, vocab: &Vocabulary) -> anyhow::Result<ModelParams> {
    let path = art.model(variant);
    art.require(&path, "train-model")?;
    let (params, _) = load_checkpoint(&path)?;
    if params.vocab_size != vocab.len() {
        bail!(
            "checkpoint {} has vocabulary size {}, artifacts have {}",
            path.display(),
            params.vocab_size,
            vocab.len()
        );
    }
    Ok(params)
}

/// The model's input embedding table as word vectors for the embedding
/// metrics.
fn model_embeddings(params: &ModelParams) -> anyhow::Result<EmbeddingMatrix> {
    let t = &params.weights.embedding;
    let rows: Vec<Vec<f64>> = (0..t.rows).map(|r| t.row(r).to_vec()).collect();
    Ok(EmbeddingMatrix::from_rows(&rows)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub split: Split,
    pub plain: EvaluationReport,
    pub kvl: Option<EvaluationReport>,
}

/// Scores the variant's checkpoint on the evaluation split without KVL and,
/// when enabled, with KVL; then records the row in the ablation table.
pub fn evaluate_variant(cfg: &PipelineConfig, variant: Variant) -> anyhow::Result<EvaluationOutcome> {
    let art = Artifacts::new(&cfg.artifacts);
    let vocab = art.load_vocab()?;
    let params = load_model(&art, variant, &vocab)?;
    let (split, dialogues) = evaluation_split(&art)?;
    let pairs = build_all_pairs(&dialogues, &vocab);
    if pairs.is_empty() {
        bail!("{} split has no dialogue exchanges to evaluate", split.name());
    }
    let registries: Vec<EntityRegistry> = dialogues.iter().map(|d| EntityRegistry::new(&vocab, &d.local_kg)).collect();
    let embeddings = model_embeddings(&params)?;
    let wv = WordVectors::new(&embeddings, &vocab);
    let mut opts = EvalOptions {
        model_tag: variant.tag().to_string(),
        use_kvl: false,
        max_len: cfg.max_response_len,
        config_fingerprint: cfg.fingerprint(),
        tokenizer_fingerprint: tokenizer_fingerprint(&art)?,
    };
    info!("evaluating {variant} on {} {} pairs", pairs.len(), split.name());
    let (plain, _) = evaluate(&params, &vocab, &pairs, &registries, &wv, &opts)?;
    write_json(&art.report(variant, false), &plain)?;
    info!("{variant}: BLEU {:.2}", plain.bleu);

    let kvl = if cfg.kvl {
        opts.use_kvl = true;
        let (report, decisions) = evaluate(&params, &vocab, &pairs, &registries, &wv, &opts)?;
        write_json(&art.report(variant, true), &report)?;
        write_file(&art.decisions(variant), |w| {
            for (pair, steps) in decisions.iter().enumerate() {
                for (step, d) in steps.iter().enumerate() {
                    let line = serde_json::json!({
                        "pair": pair,
                        "step": step,
                        "original": vocab.token(d.original_id),
                        "emitted": vocab.token(d.emitted_id),
                        "decision": d,
                    });
                    serde_json::to_writer(&mut *w, &line)?;
                    writeln!(w)?;
                }
            }
            Ok(())
        })?;
        info!("{variant}: BLEU+KVL {:.2} ({} replacements)", report.bleu, report.kvl_replacements);
        Some(report)
    } else {
        None
    };

    record_ablation_row(
        &art,
        AblationRow {
            model_tag: variant.tag().to_string(),
            bleu: plain.bleu,
            bleu_kvl: kvl.as_ref().map(|r| r.bleu),
        },
    )?;
    Ok(EvaluationOutcome { split, plain, kvl })
}

/// References scored against themselves; a check of the scoring path.
pub fn reference_sanity(cfg: &PipelineConfig) -> anyhow::Result<EvaluationReport> {
    let art = Artifacts::new(&cfg.artifacts);
    let vocab = art.load_vocab()?;
    let (_, dialogues) = evaluation_split(&art)?;
    let pairs = build_all_pairs(&dialogues, &vocab);
    if pairs.is_empty() {
        bail!("evaluation split has no dialogue exchanges");
    }
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| reference_tokens(&vocab, p)).collect();
    let embeddings = EmbeddingMatrix::random(vocab.len(), 8, cfg.seed);
    Ok(score_responses(&refs, &refs, &WordVectors::new(&embeddings, &vocab), "reference")?)
}

/// Reads the ablation table, replaces or adds `row`, and writes it back in
/// the fixed variant order.
fn record_ablation_row(art: &Artifacts, row: AblationRow) -> anyhow::Result<Vec<AblationRow>> {
    let path = art.ablation_json();
    let mut rows: Vec<AblationRow> = if path.exists() {
        let r = art.open(&path, "evaluate")?;
        serde_json::from_reader(r).with_context(|| format!("reading {}", path.display()))?
    } else {
        Vec::new()
    };
    rows.retain(|r| r.model_tag != row.model_tag);
    rows.push(row);
    let rank = |r: &AblationRow| {
        Variant::ALL
            .iter()
            .position(|v| v.tag() == r.model_tag)
            .unwrap_or(Variant::ALL.len())
    };
    rows.sort_by_key(rank);
    write_json(&path, &rows)?;
    write_file(&art.ablation_txt(), |w| w.write_all(render_ablation_table(&rows).as_bytes()))?;
    Ok(rows)
}

/// Runs every stage for all five variants under one seed and returns the
/// combined BLEU table.
pub fn ablate(cfg: &PipelineConfig) -> anyhow::Result<Vec<AblationRow>> {
    let summary = preprocess(cfg)?;
    info!("\n{}", summary.render());
    cooccur(cfg)?;
    for kind in [EmbeddingKind::Glove, EmbeddingKind::Joint] {
        train_word_vectors(cfg, kind)?;
    }
    let art = Artifacts::new(&cfg.artifacts);
    let stale = art.ablation_json();
    if stale.exists() {
        std::fs::remove_file(&stale).with_context(|| format!("removing {}", stale.display()))?;
    }
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        train_model(cfg, variant)?;
        let out = evaluate_variant(cfg, variant)?;
        rows.push(AblationRow {
            model_tag: variant.tag().to_string(),
            bleu: out.plain.bleu,
            bleu_kvl: out.kvl.map(|r| r.bleu),
        });
    }
    Ok(rows)
}
