use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    canonicalize, split_compound_entity, Dialogue, IntentSet, KnowledgeGraph, Speaker, Tokenizer,
    Triple, Turn, WEATHER_ATTRIBUTES,
};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct RawDialogue {
    scenario: RawScenario,
    #[serde(default)]
    dialogue: Vec<RawTurn>,
}

#[derive(Debug, Deserialize)]
struct RawScenario {
    task: RawTask,
    #[serde(default)]
    kb: Option<RawKb>,
}

#[derive(Debug, Deserialize)]
struct RawTask {
    intent: String,
}

#[derive(Debug, Default, Deserialize)]
struct RawKb {
    #[serde(default)]
    column_names: Option<Vec<String>>,
    #[serde(default)]
    items: Option<Vec<serde_json::Map<String, Value>>>,
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    turn: String,
    data: RawTurnData,
}

#[derive(Debug, Deserialize)]
struct RawTurnData {
    #[serde(default)]
    utterance: String,
}

/// Reads a dataset file using the in-car intent set.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Vec<Dialogue>, KnowledgeGraph)> {
    load_dataset_with(path, &IntentSet::in_car())
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    intents: &IntentSet,
) -> Result<(Vec<Dialogue>, KnowledgeGraph)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, intents).map_err(|e| match e {
        Error::Parse {
            line,
            column,
            message,
            ..
        } => Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        },
        other => other,
    })
}

/// Parses dataset JSON text.
///
/// Turns are normalized before validation: empty utterances are dropped,
/// consecutive turns by the same speaker are merged and leading assistant
/// turns are discarded. Dialogues left without a complete exchange are kept
/// so that split sizes match the source; they yield no training pairs.
pub fn parse_dataset(text: &str, intents: &IntentSet) -> Result<(Vec<Dialogue>, KnowledgeGraph)> {
    let raw: Vec<RawDialogue> = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<input>".into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut local_kgs = Vec::with_capacity(raw.len());
    let mut global = KnowledgeGraph::new();
    for (k, d) in raw.iter().enumerate() {
        let kg = kb_to_graph(d.scenario.kb.as_ref())
            .map_err(|e| Error::Validation(format!("dialogue {k}: {e}")))?;
        global.extend_from(&kg);
        local_kgs.push(kg);
    }

    let tokenizer = Tokenizer::new(global.entities().iter().cloned());
    let mut dialogues = Vec::with_capacity(raw.len());
    for (k, (d, kg)) in raw.into_iter().zip(local_kgs).enumerate() {
        let intent = intents.get(&d.scenario.task.intent).ok_or_else(|| Error::UnknownIntent {
            dialogue: k,
            intent: d.scenario.task.intent.clone(),
        })?;
        let turns = normalize_turns(k, d.dialogue, &tokenizer)?;
        let dialogue = Dialogue::new(turns, intent, kg)
            .map_err(|e| Error::Validation(format!("dialogue {k}: {e}")))?;
        dialogues.push(dialogue);
    }
    Ok((dialogues, global))
}

fn normalize_turns(k: usize, raw: Vec<RawTurn>, tokenizer: &Tokenizer) -> Result<Vec<Turn>> {
    let mut turns: Vec<Turn> = Vec::with_capacity(raw.len());
    for t in raw {
        let speaker = match t.turn.as_str() {
            "driver" => Speaker::Driver,
            "assistant" => Speaker::Assistant,
            other => {
                return Err(Error::Validation(format!(
                    "dialogue {k}: unknown speaker {other:?}"
                )))
            }
        };
        let tokens = tokenizer.tokenize(&t.data.utterance);
        if tokens.is_empty() {
            continue;
        }
        match turns.last_mut() {
            Some(last) if last.speaker == speaker => last.utterance.extend(tokens),
            None if speaker == Speaker::Assistant => {}
            _ => turns.push(Turn {
                speaker,
                utterance: tokens,
            }),
        }
    }
    Ok(turns)
}

/// KB rows become `(subject, column, value)` triples; the subject is the
/// first column. Comma-separated values yield one triple per part.
fn kb_to_graph(kb: Option<&RawKb>) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::new();
    let Some(kb) = kb else { return Ok(kg) };
    let (Some(columns), Some(items)) = (&kb.column_names, &kb.items) else {
        return Ok(kg);
    };
    let Some(subject_col) = columns.first() else {
        return Ok(kg);
    };
    for item in items {
        let Some(subject) = item.get(subject_col).and_then(value_text) else {
            continue;
        };
        let head = canonicalize(&subject)?;
        for col in &columns[1..] {
            let Some(value) = item.get(col).and_then(value_text) else {
                continue;
            };
            let relation = canonicalize(col)?;
            let n_parts = value.split(',').filter(|p| !p.trim().is_empty()).count();
            let parts = if n_parts <= WEATHER_ATTRIBUTES.len() {
                split_compound_entity(&value, &WEATHER_ATTRIBUTES)?
            } else {
                let attrs: Vec<String> = (0..n_parts).map(|i| format!("{col}_{i}")).collect();
                split_compound_entity(&value, &attrs)?
            };
            for (_, tail) in parts {
                if tail != head {
                    kg.insert(Triple::new(head.clone(), relation.clone(), tail)?);
                }
            }
        }
    }
    Ok(kg)
}

/// KB cell text; blanks and the `-` placeholder count as missing.
fn value_text(v: &Value) -> Option<String> {
    let s = match v {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        _ => return None,
    };
    (!s.is_empty() && s != "-" && s.split(',').any(|p| !p.trim().is_empty())).then_some(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dialogues: usize,
    pub pairs: usize,
    pub utterances: usize,
    pub avg_utterances_per_dialogue: f64,
    pub avg_tokens_per_utterance: f64,
    pub entities: usize,
    pub triples: usize,
}

impl DatasetStats {
    pub fn compute(dialogues: &[Dialogue], kg: &KnowledgeGraph) -> Self {
        let utterances: usize = dialogues.iter().map(|d| d.turns.len()).sum();
        let tokens: usize = dialogues
            .iter()
            .flat_map(|d| &d.turns)
            .map(|t| t.utterance.len())
            .sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        DatasetStats {
            dialogues: dialogues.len(),
            pairs: dialogues.iter().map(Dialogue::pair_count).sum(),
            utterances,
            avg_utterances_per_dialogue: ratio(utterances, dialogues.len()),
            avg_tokens_per_utterance: ratio(tokens, utterances),
            entities: kg.entities().len(),
            triples: kg.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"[
      {"scenario": {"task": {"intent": "navigate"},
        "kb": {"column_names": ["poi", "distance", "address"],
               "items": [{"poi": "Chevron", "distance": "5 miles", "address": "783 Arcadia Pl"},
                         {"poi": "Stanford Express Care", "distance": "2 miles", "address": "-"}]}},
       "dialogue": [
         {"turn": "driver", "data": {"end_dialogue": false, "utterance": "Where is the nearest gas station?"}},
         {"turn": "assistant", "data": {"utterance": "Chevron is 5 miles away at 783 Arcadia Pl."}},
         {"turn": "driver", "data": {"utterance": "Thanks"}},
         {"turn": "driver", "data": {"utterance": "a lot!"}}
       ]},
      {"scenario": {"task": {"intent": "weather"},
        "kb": {"column_names": ["location", "monday", "tuesday"],
               "items": [{"location": "Fresno", "monday": "clear skies, low of 40F, high of 60F", "tuesday": "rain, low of 30F, high of 50F"}]}},
       "dialogue": [
         {"turn": "driver", "data": {"utterance": "Will it rain in Fresno?"}},
         {"turn": "assistant", "data": {"utterance": "No, clear skies on Monday."}}
       ]}
    ]"#;

    #[test]
    fn fixture_loads() {
        let (dialogues, kg) = parse_dataset(FIXTURE, &IntentSet::in_car()).unwrap();
        assert_eq!(dialogues.len(), 2);
        // 3 navigation triples, 6 weather triples
        assert_eq!(dialogues[0].local_kg.len(), 3);
        assert_eq!(dialogues[1].local_kg.len(), 6);
        assert_eq!(kg.len(), 9);
        assert!(kg.triples().contains(&Triple::new("fresno", "monday", "low_of_40f").unwrap()));
        assert_eq!(dialogues[0].intent.name, "navigate");
        assert_eq!(
            dialogues[0].turns[1].utterance,
            ["chevron", "is", "5_miles", "away", "at", "783_arcadia_pl", "."]
        );
        // consecutive driver turns merged
        assert_eq!(dialogues[0].turns.len(), 3);
        assert_eq!(dialogues[0].turns[2].utterance, ["thanks", "a", "lot", "!"]);
        for d in &dialogues {
            assert!(d.local_kg.is_subgraph_of(&kg));
        }
    }

    #[test]
    fn shared_triples_are_unioned() {
        let text = r#"[
          {"scenario": {"task": {"intent": "navigate"},
            "kb": {"column_names": ["poi", "a", "b", "c"],
                   "items": [{"poi": "x", "a": "1", "b": "2", "c": "3"}]}},
           "dialogue": [{"turn": "driver", "data": {"utterance": "hi"}},
                        {"turn": "assistant", "data": {"utterance": "yo"}}]},
          {"scenario": {"task": {"intent": "navigate"},
            "kb": {"column_names": ["poi", "a", "d", "e", "f"],
                   "items": [{"poi": "x", "a": "1", "d": "4", "e": "5", "f": "6"}]}},
           "dialogue": [{"turn": "driver", "data": {"utterance": "hi"}},
                        {"turn": "assistant", "data": {"utterance": "yo"}}]}
        ]"#;
        let (dialogues, kg) = parse_dataset(text, &IntentSet::in_car()).unwrap();
        assert_eq!(dialogues[0].local_kg.len(), 3);
        assert_eq!(dialogues[1].local_kg.len(), 4);
        assert_eq!(kg.len(), 6);
    }

    #[test]
    fn empty_list() {
        let (d, kg) = parse_dataset("[]", &IntentSet::in_car()).unwrap();
        assert!(d.is_empty());
        assert!(kg.is_empty());
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_dataset("[\n  {\"scenario\": \n", &IntentSet::in_car()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_intent_names_dialogue() {
        let text = r#"[{"scenario": {"task": {"intent": "weather"}}, "dialogue": []},
                       {"scenario": {"task": {"intent": "shopping"}}, "dialogue": []}]"#;
        match parse_dataset(text, &IntentSet::in_car()).unwrap_err() {
            Error::UnknownIntent { dialogue, intent } => {
                assert_eq!(dialogue, 1);
                assert_eq!(intent, "shopping");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn null_kb_items() {
        let text = r#"[{"scenario": {"task": {"intent": "schedule"},
                        "kb": {"column_names": ["event", "time"], "items": null}},
                        "dialogue": [{"turn": "assistant", "data": {"utterance": "hello"}},
                                     {"turn": "driver", "data": {"utterance": "remind me"}}]}]"#;
        let (d, kg) = parse_dataset(text, &IntentSet::in_car()).unwrap();
        assert!(kg.is_empty());
        assert_eq!(d[0].turns.len(), 1);
        assert_eq!(d[0].pair_count(), 0);
    }

    #[test]
    fn deterministic_and_stats() {
        let a = parse_dataset(FIXTURE, &IntentSet::in_car()).unwrap();
        let b = parse_dataset(FIXTURE, &IntentSet::in_car()).unwrap();
        assert_eq!(a, b);
        let stats = DatasetStats::compute(&a.0, &a.1);
        assert_eq!(stats.dialogues, 2);
        assert_eq!(stats.pairs, 2);
        assert_eq!(stats.utterances, 5);
        assert_eq!(stats.triples, 9);
    }

    #[test]
    fn missing_file() {
        let err = load_dataset("/nonexistent/kvret_train.json").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/kvret_train.json"));
    }
}
