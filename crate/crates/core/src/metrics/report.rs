use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{corpus_bleu_stats, BleuStats};
use super::embedding::{embedding_average, greedy_matching, vector_extrema, WordVectors};
use crate::corpus::{TokenId, TrainingPair, Vocabulary};
use crate::error::{Error, Result};
use crate::kvl::{decode_with_kvl, EntityRegistry, KvlDecision};
use crate::neural::{generate, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub index: usize,
    pub dialogue_ref: Option<usize>,
    pub reference: String,
    pub hypothesis: String,
    pub embedding_average: f64,
    pub vector_extrema: f64,
    pub greedy_matching: f64,
    pub all_oov: bool,
    pub kvl_replacements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_tag: String,
    pub use_kvl: bool,
    /// Corpus BLEU, 0-100.
    pub bleu: f64,
    pub embedding_average: f64,
    pub vector_extrema: f64,
    pub greedy_matching: f64,
    pub examples: usize,
    /// Pairs where one side had no in-vocabulary word; scored 0.
    pub all_oov_examples: usize,
    pub kvl_replacements: usize,
    pub bleu_detail: BleuStats,
    pub config_fingerprint: String,
    pub tokenizer_fingerprint: String,
    pub per_example: Vec<ExampleScore>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }
}

/// Scores hypotheses against references with BLEU and the three
/// embedding metrics. Embedding metrics are averaged over pairs.
pub fn score_responses(
    references: &[Vec<String>],
    hypotheses: &[Vec<String>],
    word_vectors: &WordVectors,
    model_tag: &str,
) -> Result<EvaluationReport> {
    let bleu_detail = corpus_bleu_stats(references, hypotheses)?;
    let per_example: Vec<ExampleScore> = references
        .par_iter()
        .zip(hypotheses)
        .enumerate()
        .map(|(index, (r, h))| {
            let avg = embedding_average(word_vectors, r, h);
            let ext = vector_extrema(word_vectors, r, h);
            let greedy = greedy_matching(word_vectors, r, h);
            ExampleScore {
                index,
                dialogue_ref: None,
                reference: r.join(" "),
                hypothesis: h.join(" "),
                embedding_average: avg.value,
                vector_extrema: ext.value,
                greedy_matching: greedy.value,
                all_oov: avg.all_oov,
                kvl_replacements: 0,
            }
        })
        .collect();
    let n = per_example.len() as f64;
    let mean = |f: fn(&ExampleScore) -> f64| per_example.iter().map(f).sum::<f64>() / n;
    let report = EvaluationReport {
        model_tag: model_tag.to_string(),
        use_kvl: false,
        bleu: bleu_detail.bleu,
        embedding_average: mean(|e| e.embedding_average),
        vector_extrema: mean(|e| e.vector_extrema),
        greedy_matching: mean(|e| e.greedy_matching),
        examples: per_example.len(),
        all_oov_examples: per_example.iter().filter(|e| e.all_oov).count(),
        kvl_replacements: 0,
        bleu_detail,
        config_fingerprint: String::new(),
        tokenizer_fingerprint: String::new(),
        per_example,
    };
    if [report.embedding_average, report.vector_extrema, report.greedy_matching, report.bleu]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numeric(format!("non-finite metric in report {model_tag}")));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub model_tag: String,
    pub use_kvl: bool,
    pub max_len: usize,
    pub config_fingerprint: String,
    pub tokenizer_fingerprint: String,
}

/// Hypothesis tokens for scoring: everything before EOS.
pub fn response_tokens(vocab: &Vocabulary, ids: &[TokenId]) -> Vec<String> {
    let end = ids.iter().position(|&t| t == TokenId::EOS).unwrap_or(ids.len());
    vocab.decode(&ids[..end])
}

/// Reference tokens for scoring: the raw response tokens, so words that
/// map to UNK still count against the model.
pub fn reference_tokens(vocab: &Vocabulary, pair: &TrainingPair) -> Vec<String> {
    if pair.target_tokens.is_empty() {
        vocab.decode(pair.response())
    } else {
        pair.target_tokens.clone()
    }
}

/// Generates a response for every pair (optionally through KVL with the
/// pair's dialogue registry, `registries[pair.dialogue_ref]`) and scores
/// them against the raw reference tokens. Also returns the per-pair KVL
/// decision logs, empty when KVL is off.
pub fn evaluate(
    params: &ModelParams,
    vocab: &Vocabulary,
    pairs: &[TrainingPair],
    registries: &[EntityRegistry],
    word_vectors: &WordVectors,
    opts: &EvalOptions,
) -> Result<(EvaluationReport, Vec<Vec<KvlDecision>>)> {
    if pairs.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    if opts.max_len == 0 {
        return Err(Error::Validation("max_len must be at least 1".into()));
    }
    let generated: Vec<(Vec<TokenId>, Vec<KvlDecision>)> = pairs
        .par_iter()
        .map(|p| {
            if opts.use_kvl {
                let reg = registries.get(p.dialogue_ref).ok_or_else(|| {
                    Error::Lookup(format!("no entity registry for dialogue {}", p.dialogue_ref))
                })?;
                decode_with_kvl(params, &p.input, reg, opts.max_len)
            } else {
                Ok((generate(params, &p.input, opts.max_len)?, Vec::new()))
            }
        })
        .collect::<Result<_>>()?;
    let references: Vec<Vec<String>> = pairs.iter().map(|p| reference_tokens(vocab, p)).collect();
    let hypotheses: Vec<Vec<String>> = generated.iter().map(|(ids, _)| response_tokens(vocab, ids)).collect();
    let mut report = score_responses(&references, &hypotheses, word_vectors, &opts.model_tag)?;
    for ((ex, p), (_, decisions)) in report.per_example.iter_mut().zip(pairs).zip(&generated) {
        ex.dialogue_ref = Some(p.dialogue_ref);
        ex.kvl_replacements = decisions.iter().filter(|d| d.replaced).count();
    }
    report.use_kvl = opts.use_kvl;
    report.kvl_replacements = report.per_example.iter().map(|e| e.kvl_replacements).sum();
    report.config_fingerprint = opts.config_fingerprint.clone();
    report.tokenizer_fingerprint = opts.tokenizer_fingerprint.clone();
    Ok((report, generated.into_iter().map(|(_, d)| d).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model_tag: String,
    pub bleu: f64,
    pub bleu_kvl: Option<f64>,
}

/// Plain-text table of BLEU with and without KVL per model variant.
pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.model_tag.len()).chain(["Model".len()]).max().unwrap_or(5);
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:>8}  {:>10}", "Model", "BLEU", "BLEU+KVL").unwrap();
    writeln!(out, "{}", "-".repeat(width + 22)).unwrap();
    for r in rows {
        let kvl = r.bleu_kvl.map_or_else(|| "-".to_string(), |b| format!("{b:.2}"));
        writeln!(out, "{:<width$}  {:>8.2}  {:>10}", r.model_tag, r.bleu, kvl).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jointembed::EmbeddingMatrix;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["the", "car", "is", "parked", "at", "home", "now"].map(|t| (t.to_string(), false))).unwrap()
    }

    #[test]
    fn references_against_themselves_are_perfect() {
        let v = vocab();
        let e = EmbeddingMatrix::random(v.len(), 6, 1);
        let refs: Vec<Vec<String>> = ["the car is parked at home", "the car is parked now"]
            .iter()
            .map(|s| s.split(' ').map(str::to_string).collect())
            .collect();
        let r = score_responses(&refs, &refs, &WordVectors::new(&e, &v), "self").unwrap();
        assert_eq!(r.bleu, 100.0);
        for m in [r.embedding_average, r.vector_extrema, r.greedy_matching] {
            assert!((m - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.all_oov_examples, 0);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["per_example"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn response_stops_at_eos() {
        let v = vocab();
        let ids = [v.id("the").unwrap(), v.id("car").unwrap(), TokenId::EOS, v.id("now").unwrap()];
        assert_eq!(response_tokens(&v, &ids), vec!["the", "car"]);
    }

    #[test]
    fn ablation_table_aligned() {
        let rows = [
            AblationRow {
                model_tag: "S2S+glove".into(),
                bleu: 9.5,
                bleu_kvl: Some(10.25),
            },
            AblationRow {
                model_tag: "S2S+Intent+JE+EL".into(),
                bleu: 12.0,
                bleu_kvl: None,
            },
        ];
        let t = render_ablation_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].ends_with("10.25"));
        assert!(lines[3].ends_with('-'));
        assert_eq!(lines[2].len(), lines[3].len());
    }
}
