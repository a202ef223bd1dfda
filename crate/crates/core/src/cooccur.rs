//! Sparse symmetric co-occurrence and relation-strength statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{KnowledgeGraph, TokenId, TrainingPair, Vocabulary};
use crate::error::{Error, Result};

/// Symmetric sparse matrix storing only the upper triangle (`i <= j`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymmetricSparse {
    dim: usize,
    upper: BTreeMap<(u32, u32), f64>,
}

impl SymmetricSparse {
    pub fn new(dim: usize) -> Self {
        SymmetricSparse {
            dim,
            upper: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn key(i: usize, j: usize) -> (u32, u32) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        (a as u32, b as u32)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper.get(&Self::key(i, j)).copied().unwrap_or(0.0)
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.dim && j < self.dim, "index out of range");
        *self.upper.entry(Self::key(i, j)).or_insert(0.0) += value;
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.dim && j < self.dim, "index out of range");
        if value == 0.0 {
            self.upper.remove(&Self::key(i, j));
        } else {
            self.upper.insert(Self::key(i, j), value);
        }
    }

    /// Stored `(i, j, value)` with `i <= j`, in ascending order.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.upper
            .iter()
            .map(|(&(i, j), &v)| (i as usize, j as usize, v))
    }

    /// Every non-zero cell of the full matrix, mirrored entries included.
    pub fn iter_full(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.iter_upper().flat_map(|(i, j, v)| {
            let mirror = (i != j).then_some((j, i, v));
            std::iter::once((i, j, v)).chain(mirror)
        })
    }

    pub fn nnz_upper(&self) -> usize {
        self.upper.len()
    }

    pub fn nnz_full(&self) -> usize {
        self.upper.keys().map(|&(i, j)| if i == j { 1 } else { 2 }).sum()
    }

    /// Sum over the full matrix.
    pub fn total_mass(&self) -> f64 {
        self.iter_full().map(|(_, _, v)| v).sum()
    }

    fn merge(&mut self, other: SymmetricSparse) {
        for (k, v) in other.upper {
            *self.upper.entry(k).or_insert(0.0) += v;
        }
    }

    /// Same matrix with ids relabelled `i -> perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SymmetricSparse {
        let mut out = SymmetricSparse::new(self.dim);
        for (i, j, v) in self.iter_upper() {
            out.set(perm[i], perm[j], v);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CooccurWeighting {
    /// Every in-window pair counts 1.
    #[default]
    Flat,
    /// A pair at distance `d` counts `1/d`.
    Harmonic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    pub window: usize,
    pub counts: SymmetricSparse,
}

impl CooccurrenceMatrix {
    pub fn dim(&self) -> usize {
        self.counts.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.counts.get(i, j)
    }

    /// `#cooccur v1 |V|=<n> window=<w>` then `i<TAB>j<TAB>count` with `i <= j`.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#cooccur v1 |V|={} window={}", self.dim(), self.window)?;
        for (i, j, v) in self.counts.iter_upper() {
            writeln!(w, "{i}\t{j}\t{v}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Validation(e.to_string()))?
            .ok_or_else(|| Error::Validation("empty co-occurrence file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dim, window) = match fields.as_slice() {
            ["#cooccur", "v1", dim, window] => (
                header_value(dim, "|V|=")?,
                header_value(window, "window=")?,
            ),
            _ => return Err(Error::Validation(format!("bad co-occurrence header {header:?}"))),
        };
        let counts = read_entries(lines, dim)?;
        Ok(CooccurrenceMatrix { window, counts })
    }
}

fn header_value(field: &str, prefix: &str) -> Result<usize> {
    field
        .strip_prefix(prefix)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Validation(format!("bad header field {field:?}")))
}

fn read_entries<I>(lines: I, dim: usize) -> Result<SymmetricSparse>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut m = SymmetricSparse::new(dim);
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Validation(e.to_string()))?;
        let bad = || Error::Validation(format!("line {}: expected i<TAB>j<TAB>value", k + 2));
        let mut parts = line.split('\t');
        let i: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let j: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if i > j || j >= dim {
            return Err(bad());
        }
        m.set(i, j, v);
    }
    Ok(m)
}

const SHARD_SENTENCES: usize = 256;

/// Counts within-window token pairs over every pair's input and target.
///
/// Each unordered position pair `(p, q)` with `0 < q - p <= window` adds its
/// weight to `X(t_p, t_q)`. Reserved ids (PAD/SOS/EOS/UNK) are skipped, and
/// sentences never co-occur with each other.
pub fn build_cooccurrence(
    pairs: &[TrainingPair],
    vocab: &Vocabulary,
    window: usize,
    weighting: CooccurWeighting,
) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(Error::Validation("co-occurrence window must be >= 1".into()));
    }
    let dim = vocab.len();
    let sentences: Vec<Vec<TokenId>> = pairs
        .iter()
        .flat_map(|p| [&p.input, &p.target])
        .map(|s| s.iter().copied().filter(|t| !t.is_reserved()).collect())
        .collect();

    // Shards are merged in index order so the result does not depend on scheduling.
    let shards: Vec<SymmetricSparse> = sentences
        .par_chunks(SHARD_SENTENCES)
        .map(|chunk| {
            let mut m = SymmetricSparse::new(dim);
            for s in chunk {
                count_sentence(s, window, weighting, &mut m);
            }
            m
        })
        .collect();
    let mut counts = SymmetricSparse::new(dim);
    for s in shards {
        counts.merge(s);
    }
    Ok(CooccurrenceMatrix { window, counts })
}

fn count_sentence(s: &[TokenId], window: usize, weighting: CooccurWeighting, m: &mut SymmetricSparse) {
    for p in 0..s.len() {
        for q in p + 1..s.len().min(p + window + 1) {
            let w = match weighting {
                CooccurWeighting::Flat => 1.0,
                CooccurWeighting::Harmonic => 1.0 / (q - p) as f64,
            };
            m.add(s[p].index(), s[q].index(), w);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationMode {
    /// 1 for every triple-linked pair.
    Binary,
    /// Corpus co-occurrence of the linked pair, divided by the maximum.
    #[default]
    ContextCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationStrengthMatrix {
    pub mode: RelationMode,
    pub strength: SymmetricSparse,
    /// Distinct triple-linked pairs that co-occur in the corpus.
    pub linked_pairs_in_context: usize,
    /// Triples whose head and tail co-occur in the corpus.
    pub triples_in_context: usize,
    /// Largest raw co-occurrence over linked pairs.
    pub max_linked_cooccurrence: f64,
}

impl RelationStrengthMatrix {
    pub fn dim(&self) -> usize {
        self.strength.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.strength.get(i, j)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mode = match self.mode {
            RelationMode::Binary => "binary",
            RelationMode::ContextCount => "context-count",
        };
        writeln!(w, "#relation v1 |V|={} mode={mode}", self.dim())?;
        for (i, j, v) in self.strength.iter_upper() {
            writeln!(w, "{i}\t{j}\t{v}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Validation(e.to_string()))?
            .ok_or_else(|| Error::Validation("empty relation file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dim, mode) = match fields.as_slice() {
            ["#relation", "v1", dim, mode] => {
                let mode = match mode.strip_prefix("mode=") {
                    Some("binary") => RelationMode::Binary,
                    Some("context-count") => RelationMode::ContextCount,
                    _ => return Err(Error::Validation(format!("bad relation mode {mode:?}"))),
                };
                (header_value(dim, "|V|=")?, mode)
            }
            _ => return Err(Error::Validation(format!("bad relation header {header:?}"))),
        };
        let strength = read_entries(lines, dim)?;
        Ok(RelationStrengthMatrix {
            mode,
            strength,
            linked_pairs_in_context: 0,
            triples_in_context: 0,
            max_linked_cooccurrence: 0.0,
        })
    }
}

/// Relation strength between triple-linked tokens (direction and relation
/// label ignored).
pub fn build_relation_strength(
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    x: &CooccurrenceMatrix,
    mode: RelationMode,
) -> Result<RelationStrengthMatrix> {
    if x.dim() != vocab.len() {
        return Err(Error::Dimension {
            expected: vocab.len(),
            actual: x.dim(),
        });
    }
    let mut linked: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut triples_in_context = 0;
    for t in kg.triples() {
        let h = vocab.lookup(&t.head)?.index();
        let tl = vocab.lookup(&t.tail)?.index();
        if h == tl {
            continue;
        }
        let c = x.get(h, tl);
        if c > 0.0 {
            triples_in_context += 1;
        }
        linked.insert((h.min(tl), h.max(tl)), c);
    }
    let max = linked.values().copied().fold(0.0, f64::max);
    let mut strength = SymmetricSparse::new(vocab.len());
    for (&(i, j), &c) in &linked {
        let r = match mode {
            RelationMode::Binary => 1.0,
            RelationMode::ContextCount if max > 0.0 => c / max,
            RelationMode::ContextCount => 0.0,
        };
        strength.set(i, j, r);
    }
    Ok(RelationStrengthMatrix {
        mode,
        strength,
        linked_pairs_in_context: linked.values().filter(|&&c| c > 0.0).count(),
        triples_in_context,
        max_linked_cooccurrence: max,
    })
}
