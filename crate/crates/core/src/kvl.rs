//! Key-value entity lookup applied during greedy decoding.
//!
//! Whenever the decoder's top token is a KG entity that the current
//! dialogue's local KG does not contain, the most probable local entity is
//! emitted instead and fed to the next step.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{KnowledgeGraph, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::neural::{generate_with, ModelParams};

/// Global and per-dialogue entity sets as token-id masks.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityRegistry {
    global: Vec<bool>,
    local: Vec<bool>,
    local_count: usize,
}

impl EntityRegistry {
    /// Global entities are the vocabulary's entity tokens. Local entities
    /// are the local KG's entities that have a global id; the rest cannot
    /// be emitted and are ignored.
    pub fn new(vocab: &Vocabulary, local_kg: &KnowledgeGraph) -> Self {
        let global: Vec<TokenId> = vocab.entity_ids().collect();
        let local = local_kg.entities().iter().filter_map(|e| vocab.id(e)).filter(|&id| vocab.is_entity(id));
        Self::from_ids(vocab.len(), global, local).expect("local ids are drawn from the global set")
    }

    pub fn from_ids(
        vocab_size: usize,
        global: impl IntoIterator<Item = TokenId>,
        local: impl IntoIterator<Item = TokenId>,
    ) -> Result<Self> {
        let mut g = vec![false; vocab_size];
        for id in global {
            *g.get_mut(id.index()).ok_or_else(|| out_of_range(id, vocab_size))? = true;
        }
        let mut l = vec![false; vocab_size];
        for id in local {
            if !g.get(id.index()).copied().unwrap_or(false) {
                return Err(Error::Validation(format!("local entity {id} is not a global entity")));
            }
            l[id.index()] = true;
        }
        let local_count = l.iter().filter(|&&b| b).count();
        Ok(EntityRegistry {
            global: g,
            local: l,
            local_count,
        })
    }

    /// Same global set, different local KG.
    pub fn with_local(&self, local: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        Self::from_ids(self.vocab_size(), self.global_ids(), local)
    }

    pub fn vocab_size(&self) -> usize {
        self.global.len()
    }

    pub fn is_global(&self, id: TokenId) -> bool {
        self.global.get(id.index()).copied().unwrap_or(false)
    }

    pub fn is_local(&self, id: TokenId) -> bool {
        self.local.get(id.index()).copied().unwrap_or(false)
    }

    pub fn global_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        mask_ids(&self.global)
    }

    pub fn local_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        mask_ids(&self.local)
    }

    pub fn local_is_empty(&self) -> bool {
        self.local_count == 0
    }
}

fn out_of_range(id: TokenId, n: usize) -> Error {
    Error::Validation(format!("token id {id} outside vocabulary of size {n}"))
}

fn mask_ids(mask: &[bool]) -> impl Iterator<Item = TokenId> + '_ {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| TokenId::from_index(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvlReason {
    NotEntity,
    InLocal,
    Replaced,
    LocalEmptyPassthrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvlDecision {
    pub original_id: TokenId,
    pub emitted_id: TokenId,
    pub replaced: bool,
    pub reason: KvlReason,
}

impl KvlDecision {
    fn keep(id: TokenId, reason: KvlReason) -> Self {
        KvlDecision {
            original_id: id,
            emitted_id: id,
            replaced: false,
            reason,
        }
    }
}

/// Index of the largest value among `candidates`; earlier (lower) ids win ties.
fn argmax_over(dist: &[f64], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    candidates.fold(None, |best, i| match best {
        Some(b) if dist[b] >= dist[i] => Some(b),
        _ => Some(i),
    })
}

pub fn constrain(dist: &[f64], registry: &EntityRegistry) -> Result<KvlDecision> {
    if dist.len() != registry.vocab_size() {
        return Err(Error::Dimension {
            expected: registry.vocab_size(),
            actual: dist.len(),
        });
    }
    let top = argmax_over(dist, 0..dist.len()).ok_or_else(|| Error::Validation("empty distribution".into()))?;
    let top = TokenId::from_index(top);
    if !registry.is_global(top) {
        return Ok(KvlDecision::keep(top, KvlReason::NotEntity));
    }
    if registry.is_local(top) {
        return Ok(KvlDecision::keep(top, KvlReason::InLocal));
    }
    match argmax_over(dist, registry.local_ids().map(TokenId::index)) {
        Some(best) => Ok(KvlDecision {
            original_id: top,
            emitted_id: TokenId::from_index(best),
            replaced: true,
            reason: KvlReason::Replaced,
        }),
        None => Ok(KvlDecision::keep(top, KvlReason::LocalEmptyPassthrough)),
    }
}

/// Greedy decoding with every step passed through [`constrain`]; the
/// emitted token is what the next step sees.
pub fn decode_with_kvl(
    params: &ModelParams,
    input_ids: &[TokenId],
    registry: &EntityRegistry,
    max_len: usize,
) -> Result<(Vec<TokenId>, Vec<KvlDecision>)> {
    if registry.vocab_size() != params.vocab_size {
        return Err(Error::Dimension {
            expected: params.vocab_size,
            actual: registry.vocab_size(),
        });
    }
    let mut decisions = Vec::new();
    let tokens = generate_with(params, input_ids, max_len, |step| {
        let d = constrain(&step.probs, registry).expect("registry size checked above");
        decisions.push(d);
        d.emitted_id
    })?;
    Ok((tokens, decisions))
}

/// One JSON object per line.
pub fn write_decisions_jsonl<W: Write>(decisions: &[KvlDecision], mut w: W) -> std::io::Result<()> {
    for d in decisions {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    Ok(())
}
