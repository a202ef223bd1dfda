//! Dialogue corpus, knowledge graphs, tokenization and training pairs.

mod canon;
mod dataset;
mod tokenizer;
mod vocab;

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canon::{canonicalize, split_compound_entity, WEATHER_ATTRIBUTES};
pub use dataset::{load_dataset, load_dataset_with, parse_dataset, DatasetStats};
pub use tokenizer::{Tokenizer, PUNCTUATION};
pub use vocab::{build_vocabulary, TokenId, Vocabulary, RESERVED};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    /// Builds a triple from already-canonical tokens.
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Result<Self> {
        let t = Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        };
        for field in [&t.head, &t.relation, &t.tail] {
            if field.is_empty() || field.contains(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "triple field {field:?} is not a canonical token"
                )));
            }
        }
        Ok(t)
    }

    /// Canonicalizes raw values into a triple.
    pub fn from_raw(head: &str, relation: &str, tail: &str) -> Result<Self> {
        Triple::new(canonicalize(head)?, canonicalize(relation)?, canonicalize(tail)?)
    }
}

/// Set of triples with the entity set kept equal to all heads and tails.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Triple>", into = "Vec<Triple>")]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
    entities: BTreeSet<String>,
}

impl From<Vec<Triple>> for KnowledgeGraph {
    fn from(triples: Vec<Triple>) -> Self {
        triples.into_iter().collect()
    }
}

impl From<KnowledgeGraph> for Vec<Triple> {
    fn from(kg: KnowledgeGraph) -> Self {
        kg.triples.into_iter().collect()
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the triple was already present.
    pub fn insert(&mut self, triple: Triple) -> bool {
        self.entities.insert(triple.head.clone());
        self.entities.insert(triple.tail.clone());
        self.triples.insert(triple)
    }

    pub fn extend_from(&mut self, other: &KnowledgeGraph) {
        for t in &other.triples {
            self.insert(t.clone());
        }
    }

    pub fn triples(&self) -> &BTreeSet<Triple> {
        &self.triples
    }

    pub fn entities(&self) -> &BTreeSet<String> {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains_entity(&self, token: &str) -> bool {
        self.entities.contains(token)
    }

    pub fn is_subgraph_of(&self, other: &KnowledgeGraph) -> bool {
        self.triples.is_subset(&other.triples)
    }

    /// `head<TAB>relation<TAB>tail` per line, in sorted triple order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
        }
        Ok(())
    }
}

impl FromIterator<Triple> for KnowledgeGraph {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        let mut kg = KnowledgeGraph::new();
        for t in iter {
            kg.insert(t);
        }
        kg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Driver,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntentLabel {
    pub id: usize,
    pub name: String,
}

/// The closed set of dialogue intents a dataset may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSet {
    names: Vec<String>,
}

impl IntentSet {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        IntentSet {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    /// Intents of the in-car assistant dataset.
    pub fn in_car() -> Self {
        IntentSet::new(["schedule", "weather", "navigate"])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<IntentLabel> {
        self.names.iter().position(|n| n == name).map(|id| IntentLabel {
            id,
            name: self.names[id].clone(),
        })
    }

    pub fn by_id(&self, id: usize) -> Option<IntentLabel> {
        self.names.get(id).map(|n| IntentLabel { id, name: n.clone() })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub turns: Vec<Turn>,
    pub intent: IntentLabel,
    pub local_kg: KnowledgeGraph,
}

impl Dialogue {
    /// Validates that turns are non-empty and alternate starting with the driver.
    pub fn new(turns: Vec<Turn>, intent: IntentLabel, local_kg: KnowledgeGraph) -> Result<Self> {
        for (k, turn) in turns.iter().enumerate() {
            let expected = if k % 2 == 0 { Speaker::Driver } else { Speaker::Assistant };
            if turn.speaker != expected {
                return Err(Error::Validation(format!(
                    "turn {k} should be spoken by {expected:?}, found {:?}",
                    turn.speaker
                )));
            }
            if turn.utterance.is_empty() {
                return Err(Error::Validation(format!("turn {k} has an empty utterance")));
            }
        }
        Ok(Dialogue {
            turns,
            intent,
            local_kg,
        })
    }

    /// Number of (driver, assistant) exchanges.
    pub fn pair_count(&self) -> usize {
        self.turns.len() / 2
    }

    /// `(context, response)` token pairs: the k-th context is every utterance
    /// before the k-th assistant turn, in order.
    pub fn context_pairs(&self) -> Vec<(Vec<String>, Vec<String>)> {
        let mut context: Vec<String> = Vec::new();
        let mut out = Vec::with_capacity(self.pair_count());
        for turn in &self.turns {
            if turn.speaker == Speaker::Assistant {
                out.push((context.clone(), turn.utterance.clone()));
            }
            context.extend(turn.utterance.iter().cloned());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    /// Concatenated context `[i_1; o_1; ...; o_{k-1}; i_k]`.
    pub input: Vec<TokenId>,
    /// Assistant response `o_k`, terminated by EOS.
    pub target: Vec<TokenId>,
    pub intent: IntentLabel,
    pub dialogue_ref: usize,
    /// The response as raw tokens, including ones that map to UNK.
    pub target_tokens: Vec<String>,
}

impl TrainingPair {
    /// Target ids without the trailing EOS.
    pub fn response(&self) -> &[TokenId] {
        match self.target.split_last() {
            Some((&TokenId::EOS, rest)) => rest,
            _ => &self.target,
        }
    }
}

pub fn build_pairs(dialogue: &Dialogue, dialogue_ref: usize, vocab: &Vocabulary) -> Vec<TrainingPair> {
    dialogue
        .context_pairs()
        .into_iter()
        .map(|(context, response)| {
            let mut target = vocab.encode(&response);
            target.push(TokenId::EOS);
            TrainingPair {
                input: vocab.encode(&context),
                target,
                intent: dialogue.intent.clone(),
                dialogue_ref,
                target_tokens: response,
            }
        })
        .collect()
}

/// Pairs for every dialogue, `dialogue_ref` being the position in `dialogues`.
pub fn build_all_pairs(dialogues: &[Dialogue], vocab: &Vocabulary) -> Vec<TrainingPair> {
    dialogues
        .iter()
        .enumerate()
        .flat_map(|(k, d)| build_pairs(d, k, vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn dialogue(utts: &[&str]) -> Dialogue {
        let turns = utts
            .iter()
            .enumerate()
            .map(|(k, u)| Turn {
                speaker: if k % 2 == 0 { Speaker::Driver } else { Speaker::Assistant },
                utterance: words(u),
            })
            .collect();
        Dialogue::new(turns, IntentSet::in_car().get("weather").unwrap(), KnowledgeGraph::new())
            .unwrap()
    }

    fn vocab_for(d: &Dialogue) -> Vocabulary {
        build_vocabulary(std::slice::from_ref(d), &KnowledgeGraph::new(), 1).unwrap()
    }

    #[test]
    fn two_pair_context_concatenation() {
        let d = dialogue(&["i1", "o1", "i2", "o2"]);
        let v = vocab_for(&d);
        let pairs = build_pairs(&d, 0, &v);
        assert_eq!(pairs.len(), 2);
        assert_eq!(v.decode(&pairs[0].input), ["i1"]);
        assert_eq!(v.decode(pairs[0].response()), ["o1"]);
        assert_eq!(v.decode(&pairs[1].input), ["i1", "o1", "i2"]);
        assert_eq!(v.decode(&pairs[1].target), ["o2", "<eos>"]);
    }

    #[test]
    fn single_pair() {
        let d = dialogue(&["hello there", "hi"]);
        let v = vocab_for(&d);
        let pairs = build_pairs(&d, 7, &v);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].dialogue_ref, 7);
        assert_eq!(v.decode(&pairs[0].input), ["hello", "there"]);
    }

    #[test]
    fn third_input_length() {
        // |i1|=2 |o1|=3 |i2|=1 |o2|=4 |i3|=2
        let d = dialogue(&["a b", "c d e", "f", "g h i j", "k l", "m"]);
        let v = vocab_for(&d);
        let pairs = build_pairs(&d, 0, &v);
        assert_eq!(pairs[2].input.len(), 2 + 3 + 1 + 4 + 2);
    }

    #[test]
    fn alternation_is_enforced() {
        let t = |s, u: &str| Turn { speaker: s, utterance: words(u) };
        let intent = IntentSet::in_car().by_id(0).unwrap();
        let bad = vec![t(Speaker::Assistant, "x"), t(Speaker::Driver, "y")];
        assert!(Dialogue::new(bad, intent.clone(), KnowledgeGraph::new()).is_err());
        let empty = vec![t(Speaker::Driver, "")];
        assert!(Dialogue::new(empty, intent, KnowledgeGraph::new()).is_err());
    }

    #[test]
    fn kg_dedups_and_tracks_entities() {
        let mut kg = KnowledgeGraph::new();
        assert!(kg.insert(Triple::new("chevron", "distance", "5_miles").unwrap()));
        assert!(!kg.insert(Triple::new("chevron", "distance", "5_miles").unwrap()));
        kg.insert(Triple::new("chevron", "address", "783_arcadia_pl").unwrap());
        assert_eq!(kg.len(), 2);
        let ents: Vec<_> = kg.entities().iter().cloned().collect();
        assert_eq!(ents, ["5_miles", "783_arcadia_pl", "chevron"]);
        let mut buf = Vec::new();
        kg.write_tsv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "chevron\taddress\t783_arcadia_pl\nchevron\tdistance\t5_miles\n"
        );
        assert!(Triple::new("a b", "r", "t").is_err());
        assert!(Triple::new("", "r", "t").is_err());
    }

    #[test]
    fn vocabulary_counts() {
        let d = dialogue(&["red blue red", "green blue", "cyan", "magenta"]);
        let kg: KnowledgeGraph = [Triple::new("alpha", "rel", "beta").unwrap()].into_iter().collect();
        let v = build_vocabulary(&[d], &kg, 1).unwrap();
        // 5 unique words + 2 entities absent from text
        assert_eq!(v.content_len(), 7);
        assert_eq!(v.len(), 11);
        assert_eq!(v.token(TokenId(4)), "blue");
        assert_eq!(v.token(TokenId(5)), "red");
        assert!(v.is_entity(v.id("alpha").unwrap()));
        assert!(!v.is_entity(v.id("red").unwrap()));
        assert_eq!(v.id_or_unk("purple"), TokenId::UNK);

        let empty = build_vocabulary(&[], &KnowledgeGraph::new(), 1).unwrap();
        assert_eq!(empty.len(), 4);
        assert_eq!(empty.tokens(), RESERVED);
    }

    #[test]
    fn min_count_keeps_entities() {
        let d = dialogue(&["a a b", "chevron"]);
        let kg: KnowledgeGraph = [Triple::new("chevron", "poi_type", "gas_station").unwrap()]
            .into_iter()
            .collect();
        let v = build_vocabulary(&[d], &kg, 2).unwrap();
        let toks: Vec<_> = v.tokens()[4..].to_vec();
        assert_eq!(toks, ["a", "chevron", "gas_station"]);
    }

    #[test]
    fn vocabulary_tsv_roundtrip() {
        let d = dialogue(&["x y", "z"]);
        let kg: KnowledgeGraph = [Triple::new("p", "r", "q").unwrap()].into_iter().collect();
        let v = build_vocabulary(&[d], &kg, 1).unwrap();
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        let back = Vocabulary::read_tsv(&buf[..]).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(idx in proptest::collection::vec(0usize..6, 0..20)) {
            let d = dialogue(&["a b c", "d e f"]);
            let v = vocab_for(&d);
            let toks: Vec<String> = idx.iter().map(|&i| v.tokens()[4 + i].clone()).collect();
            prop_assert_eq!(v.decode(&v.encode(&toks)), toks);
        }

        #[test]
        fn context_prefix_property(lens in proptest::collection::vec(1usize..4, 2..10)) {
            let n = lens.len() & !1;
            let utts: Vec<String> = lens[..n]
                .iter()
                .enumerate()
                .map(|(k, &l)| (0..l).map(|j| format!("w{k}_{j}")).collect::<Vec<_>>().join(" "))
                .collect();
            let refs: Vec<&str> = utts.iter().map(String::as_str).collect();
            let d = dialogue(&refs);
            let v = vocab_for(&d);
            let pairs = build_pairs(&d, 0, &v);
            prop_assert_eq!(pairs.len(), n / 2);
            for k in 1..pairs.len() {
                let mut prefix = pairs[k - 1].input.clone();
                prefix.extend_from_slice(pairs[k - 1].response());
                prop_assert!(pairs[k].input.len() > prefix.len());
                prop_assert_eq!(&pairs[k].input[..prefix.len()], &prefix[..]);
            }
        }
    }
}
