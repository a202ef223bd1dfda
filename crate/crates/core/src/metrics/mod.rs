//! Corpus BLEU, embedding-based similarity metrics and evaluation reports.

mod bleu;
mod embedding;
mod report;

pub use bleu::{corpus_bleu, corpus_bleu_stats, BleuStats, MAX_ORDER};
pub use embedding::{embedding_average, greedy_matching, vector_extrema, SentenceScore, WordVectors};
pub use report::{
    evaluate, reference_tokens, render_ablation_table, response_tokens, score_responses, AblationRow, EvalOptions, EvaluationReport,
    ExampleScore,
};
