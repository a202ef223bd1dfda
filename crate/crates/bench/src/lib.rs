//! Shared inputs for the benchmarks, built from the in-car test fixture.

use std::path::PathBuf;

use kgdial::cooccur::{build_cooccurrence, build_relation_strength, CooccurWeighting};
use kgdial::corpus::{build_all_pairs, build_vocabulary, load_dataset};
use kgdial::{CooccurrenceMatrix, KnowledgeGraph, RelationMode, RelationStrengthMatrix, TrainingPair, Vocabulary};

pub const WINDOW: usize = 15;

pub struct Corpus {
    pub vocab: Vocabulary,
    pub kg: KnowledgeGraph,
    pub pairs: Vec<TrainingPair>,
    pub cooccur: CooccurrenceMatrix,
    pub relation: RelationStrengthMatrix,
}

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/fixtures/incar_train.json")
}

pub fn load_corpus() -> Corpus {
    let (dialogues, kg) = load_dataset(fixture_path()).expect("fixture loads");
    let vocab = build_vocabulary(&dialogues, &kg, 1).expect("vocabulary");
    let pairs = build_all_pairs(&dialogues, &vocab);
    let cooccur = build_cooccurrence(&pairs, &vocab, WINDOW, CooccurWeighting::Flat).expect("co-occurrence");
    let relation = build_relation_strength(&kg, &vocab, &cooccur, RelationMode::ContextCount).expect("relation strength");
    Corpus {
        vocab,
        kg,
        pairs,
        cooccur,
        relation,
    }
}
