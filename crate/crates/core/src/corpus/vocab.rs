use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Dialogue, KnowledgeGraph};
use crate::error::{Error, Result};

/// Index of a token in a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const SOS: TokenId = TokenId(1);
    pub const EOS: TokenId = TokenId(2);
    pub const UNK: TokenId = TokenId(3);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(i: usize) -> Self {
        TokenId(u32::try_from(i).expect("token index fits in u32"))
    }

    pub fn is_reserved(self) -> bool {
        self.0 < RESERVED.len() as u32
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    entity: Vec<bool>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, is_entity)` pairs that follow the
    /// reserved tokens.
    pub fn from_tokens<I>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, bool)>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            entity: Vec::new(),
        };
        for r in RESERVED {
            vocab.push(r.to_string(), false)?;
        }
        for (tok, ent) in content {
            vocab.push(tok, ent)?;
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String, is_entity: bool) -> Result<()> {
        if self.index.contains_key(&token) {
            return Err(Error::Validation(format!("duplicate vocabulary token {token:?}")));
        }
        let id = TokenId::from_index(self.tokens.len());
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        self.entity.push(is_entity);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-reserved tokens.
    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(TokenId::UNK)
    }

    pub fn lookup(&self, token: &str) -> Result<TokenId> {
        self.id(token).ok_or_else(|| Error::Lookup(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn is_entity(&self, id: TokenId) -> bool {
        self.entity.get(id.index()).copied().unwrap_or(false)
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entity
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(i, _)| TokenId::from_index(i))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    /// One line per id: `token<TAB>0|1` (entity flag).
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (tok, &ent) in self.tokens.iter().zip(&self.entity) {
            writeln!(w, "{tok}\t{}", u8::from(ent))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut content = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Validation(format!("vocabulary line {}: {e}", lineno + 1)))?;
            let (tok, flag) = line.split_once('\t').ok_or_else(|| {
                Error::Validation(format!("vocabulary line {}: expected token<TAB>flag", lineno + 1))
            })?;
            let is_entity = match flag {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Validation(format!(
                        "vocabulary line {}: bad entity flag {other:?}",
                        lineno + 1
                    )))
                }
            };
            if lineno < RESERVED.len() {
                if tok != RESERVED[lineno] {
                    return Err(Error::Validation(format!(
                        "vocabulary line {}: expected reserved token {}",
                        lineno + 1,
                        RESERVED[lineno]
                    )));
                }
                continue;
            }
            content.push((tok.to_string(), is_entity));
        }
        Vocabulary::from_tokens(content)
    }
}

/// Corpus tokens with count >= `min_count`, plus every KG entity.
///
/// Content ids are assigned by descending corpus count, ties by token; KG
/// entities below the cutoff follow in lexical order.
pub fn build_vocabulary(
    dialogues: &[Dialogue],
    kg: &KnowledgeGraph,
    min_count: usize,
) -> Result<Vocabulary> {
    let min_count = min_count.max(1);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in dialogues {
        for turn in &d.turns {
            for tok in &turn.utterance {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut frequent: Vec<(&str, usize)> = counts
        .iter()
        .filter(|(tok, &c)| c >= min_count && !RESERVED.contains(tok))
        .map(|(&t, &c)| (t, c))
        .collect();
    frequent.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let entities = kg.entities();
    let mut content: Vec<(String, bool)> = frequent
        .iter()
        .map(|(t, _)| (t.to_string(), entities.contains(*t)))
        .collect();
    for e in entities {
        if counts.get(e.as_str()).copied().unwrap_or(0) < min_count {
            content.push((e.clone(), true));
        }
    }
    Vocabulary::from_tokens(content)
}
