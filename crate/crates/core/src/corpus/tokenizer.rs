use std::collections::HashSet;

use sha2::{Digest, Sha256};

/// Characters split off into standalone tokens.
pub const PUNCTUATION: [char; 5] = ['.', ',', '?', '!', ';'];

/// Longest multi-word entity mention the tokenizer will try to merge.
const MAX_ENTITY_WORDS: usize = 8;

/// Lowercasing whitespace tokenizer that keeps canonical KG entities whole.
///
/// Multi-word surface forms of known entities (`"783 Arcadia Pl"`) are merged
/// into their canonical token (`783_arcadia_pl`) by longest match.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer {
    entities: HashSet<String>,
    max_span: usize,
}

fn is_punct(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

impl Tokenizer {
    pub fn new<I, S>(entities: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entities: HashSet<String> = entities.into_iter().map(Into::into).collect();
        let max_span = entities
            .iter()
            .map(|e| e.split('_').count())
            .max()
            .unwrap_or(1)
            .min(MAX_ENTITY_WORDS);
        Tokenizer { entities, max_span }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lowered = text.to_lowercase();
        let words: Vec<&str> = lowered.split_whitespace().collect();
        let mut out = Vec::with_capacity(words.len() + 2);
        let mut i = 0;
        while i < words.len() {
            if let Some(consumed) = self.match_entity(&words[i..], &mut out) {
                i += consumed;
                continue;
            }
            split_punctuation(words[i], &mut out);
            i += 1;
        }
        out
    }

    /// Tries the longest entity span starting at `words[0]`, pushing the
    /// entity token plus any trailing punctuation it had to strip.
    fn match_entity(&self, words: &[&str], out: &mut Vec<String>) -> Option<usize> {
        if self.entities.is_empty() {
            return None;
        }
        let longest = self.max_span.min(words.len());
        for span in (1..=longest).rev() {
            let joined = words[..span].join("_");
            if self.entities.contains(&joined) {
                out.push(joined);
                return Some(span);
            }
            let stripped = joined.trim_end_matches(is_punct);
            if stripped.len() < joined.len() && self.entities.contains(stripped) {
                let tail = &joined[stripped.len()..];
                out.push(stripped.to_string());
                out.extend(tail.chars().map(String::from));
                return Some(span);
            }
        }
        None
    }

    /// Stable identifier of the tokenization rules plus entity set.
    pub fn fingerprint(&self) -> String {
        let mut entities: Vec<&String> = self.entities.iter().collect();
        entities.sort();
        let mut hasher = Sha256::new();
        hasher.update(b"ws-lower-punct5-entity-longest-match/v1\n");
        for e in entities {
            hasher.update(e.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("ws-punct5-entities{}-{hex}", self.entities.len())
    }
}

/// Splits punctuation into separate tokens, except `.`/`,` between two digits.
fn split_punctuation(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut current = String::new();
    for (k, &c) in chars.iter().enumerate() {
        let numeric = (c == '.' || c == ',')
            && k > 0
            && k + 1 < chars.len()
            && chars[k - 1].is_ascii_digit()
            && chars[k + 1].is_ascii_digit();
        if is_punct(c) && !numeric {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
}
