//! Knowledge-grounded goal-oriented dialogue.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! * [`corpus`]: dataset ingestion, entity canonicalization, tokenization,
//!   vocabulary and context-concatenated training pairs.
//! * [`cooccur`]: sparse word co-occurrence and KG relation-strength matrices.
//! * [`jointembed`]: word vectors trained on the GloVe objective plus a
//!   KG-pull term weighted by `lambda`.
//! * [`neural`]: LSTM encoder / attention decoder with an intent head and an
//!   entity cosine loss, trained with hand-written backpropagation and Adam.
//! * [`kvl`]: key-value entity lookup that keeps decoded entities inside the
//!   dialogue's local knowledge graph.
//! * [`metrics`]: corpus BLEU and embedding-based similarity metrics.

pub mod cooccur;
pub mod corpus;
pub mod error;
pub mod jointembed;
pub mod kvl;
pub mod metrics;
pub mod neural;

pub use cooccur::{CooccurrenceMatrix, RelationMode, RelationStrengthMatrix};
pub use corpus::{
    Dialogue, IntentLabel, IntentSet, KnowledgeGraph, Speaker, TokenId, Tokenizer, TrainingPair,
    Triple, Turn, Vocabulary,
};
pub use error::{Error, Result};
pub use jointembed::{EmbeddingMatrix, JointTrainConfig};
pub use kvl::{EntityRegistry, KvlDecision, KvlReason};
pub use metrics::EvaluationReport;
pub use neural::{LossBreakdown, ModelParams, TrainConfig};
