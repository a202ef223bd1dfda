//! Joint corpus / knowledge-graph word embeddings.
//!
//! Minimizes `J = J_C + lambda * J_S` where `J_C` is the GloVe weighted
//! least-squares fit to log co-occurrence counts and `J_S` pulls the vectors
//! of KG-linked tokens together in proportion to their relation strength.

mod objective;
mod train;

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

pub use objective::{
    corpus_objective, glove_weight, joint_gradients, joint_objective, kg_objective, ObjectiveParts,
};
pub use train::{train_embeddings, train_glove, EmbedEpoch, EmbedTrainOutcome};

/// `|V| x d` word vectors plus one bias per word, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    pub vectors: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradients share the embedding layout.
pub type EmbeddingGradient = EmbeddingMatrix;

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            dim,
            vectors: vec![0.0; rows * dim],
            biases: vec![0.0; rows],
        }
    }

    /// Vectors uniform in `[-0.5/d, 0.5/d]`, zero biases.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.5 / dim as f64;
        let vectors = (0..rows * dim).map(|_| rng.gen_range(-scale..=scale)).collect();
        EmbeddingMatrix {
            dim,
            vectors,
            biases: vec![0.0; rows],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: bad.len(),
            });
        }
        Ok(EmbeddingMatrix {
            dim,
            vectors: rows.concat(),
            biases: vec![0.0; rows.len()],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.biases.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, id: TokenId) -> &[f64] {
        self.row(id.index())
    }

    /// First row holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        (0..self.rows()).find(|&i| {
            !self.biases[i].is_finite() || self.row(i).iter().any(|v| !v.is_finite())
        })
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    /// `<token> <v1> ... <vd>` per row with six decimals.
    pub fn write_text<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> std::io::Result<()> {
        for (i, tok) in vocab.tokens().iter().enumerate() {
            write!(w, "{tok}")?;
            for v in self.row(i) {
                write!(w, " {v:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// `<token> <bias>` per row with six decimals.
    pub fn write_biases<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> std::io::Result<()> {
        for (tok, b) in vocab.tokens().iter().zip(&self.biases) {
            writeln!(w, "{tok} {b:.6}")?;
        }
        Ok(())
    }

    /// Reads vectors in GloVe text format, placing each row at its vocabulary
    /// id. Every vocabulary token must be present.
    pub fn read_text<R: BufRead>(vocab: &Vocabulary, r: R) -> Result<Self> {
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
        let mut dim = None;
        for (k, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Validation(format!("embedding line {}: {e}", k + 1)))?;
            let mut fields = line.split(' ');
            let Some(tok) = fields.next().filter(|t| !t.is_empty()) else {
                continue;
            };
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Validation(format!("embedding line {}: {e}", k + 1)))?;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    actual: values.len(),
                });
            }
            if let Some(id) = vocab.id(tok) {
                rows[id.index()] = Some(values);
            }
        }
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| Error::Lookup(vocab.tokens()[i].clone())))
            .collect::<Result<_>>()?;
        EmbeddingMatrix::from_rows(&rows)
    }

    pub fn read_biases<R: BufRead>(&mut self, vocab: &Vocabulary, r: R) -> Result<()> {
        for (k, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Validation(format!("bias line {}: {e}", k + 1)))?;
            let Some((tok, b)) = line.split_once(' ') else { continue };
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|e| Error::Validation(format!("bias line {}: {e}", k + 1)))?;
            if let Some(id) = vocab.id(tok) {
                self.biases[id.index()] = b;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedOptimizer {
    GradientDescent,
    #[default]
    AdaGrad,
}

/// Which setting the otherwise unexplained `alpha` hyperparameter drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaRole {
    #[default]
    Unused,
    WeightExponent,
    LearningRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointTrainConfig {
    pub dim: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub x_max: f64,
    pub weight_exponent: f64,
    pub optimizer: EmbedOptimizer,
    pub alpha: f64,
    pub alpha_role: AlphaRole,
    pub seed: u64,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        JointTrainConfig {
            dim: 300,
            lambda: 10_000.0,
            epochs: 500,
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            x_max: 100.0,
            weight_exponent: 0.75,
            optimizer: EmbedOptimizer::AdaGrad,
            alpha: 0.01,
            alpha_role: AlphaRole::Unused,
            seed: 42,
        }
    }
}

impl JointTrainConfig {
    /// Config with `alpha` applied to the field its role names.
    pub fn resolved(&self) -> JointTrainConfig {
        let mut cfg = self.clone();
        match self.alpha_role {
            AlphaRole::Unused => {}
            AlphaRole::WeightExponent => cfg.weight_exponent = self.alpha,
            AlphaRole::LearningRate => cfg.learning_rate = self.alpha,
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = self.resolved();
        let bad = |what: &str| Err(Error::Validation(format!("joint embedding config: {what}")));
        if cfg.dim == 0 {
            return bad("dim must be positive");
        }
        if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
            return bad("lambda must be a non-negative number");
        }
        if !(cfg.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(cfg.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(cfg.x_max > 0.0) {
            return bad("x_max must be positive");
        }
        if !(cfg.weight_exponent > 0.0 && cfg.weight_exponent <= 1.0) {
            return bad("weight_exponent must lie in (0, 1]");
        }
        Ok(())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// The `k` tokens most cosine-similar to `token`, excluding itself; ties go
/// to the lower id.
pub fn nearest_neighbors(
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
    token: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let query = vocab.lookup(token)?.index();
    let q = embeddings.row(query);
    let mut scored: Vec<(usize, f64)> = (0..embeddings.rows())
        .filter(|&i| i != query)
        .map(|i| (i, cosine(q, embeddings.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (vocab.tokens()[i].clone(), s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens((0..n).map(|i| (format!("t{i}"), false))).unwrap()
    }

    #[test]
    fn init_range_and_determinism() {
        let a = EmbeddingMatrix::random(10, 4, 7);
        assert!(a.vectors.iter().all(|v| v.abs() <= 0.125));
        assert!(a.biases.iter().all(|&b| b == 0.0));
        assert_eq!(a, EmbeddingMatrix::random(10, 4, 7));
        assert_ne!(a, EmbeddingMatrix::random(10, 4, 8));
    }

    #[test]
    fn neighbors_identical_vector_first() {
        let v = vocab(3); // 4 reserved + 3
        let mut e = EmbeddingMatrix::zeros(7, 2);
        for (i, row) in [[0.1, 0.9], [0.9, 0.1], [-1.0, 0.0], [0.5, 0.5], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]
            .iter()
            .enumerate()
        {
            e.row_mut(i).copy_from_slice(row);
        }
        let nn = nearest_neighbors(&e, &v, "t0", 3).unwrap();
        // t0 = (1,1): (0.5,0.5) at id 3 ties it exactly
        assert_eq!(nn[0].0, "<unk>");
        assert!((nn[0].1 - 1.0).abs() < 1e-12);
        assert!(nn.iter().all(|(t, _)| t != "t0"));
        assert!(matches!(nearest_neighbors(&e, &v, "zzz", 1), Err(Error::Lookup(_))));
    }

    #[test]
    fn neighbors_match_brute_force() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.8, 0.6, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.1, 0.0],
            vec![0.6, 0.0, 0.8],
        ];
        let names: Vec<(String, bool)> = (0..1).map(|i| (format!("x{i}"), false)).collect();
        let v = Vocabulary::from_tokens(names).unwrap();
        let e = EmbeddingMatrix::from_rows(&rows).unwrap();
        // query <pad> = (1,0,0): cosines 0.8 (id1), 0.6 (id4), 0 (id2), -0.995 (id3)
        let nn = nearest_neighbors(&e, &v, "<pad>", 4).unwrap();
        let order: Vec<&str> = nn.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(order, ["<sos>", "x0", "<eos>", "<unk>"]);
        assert!((nn[0].1 - 0.8).abs() < 1e-12);
        assert!((nn[1].1 - 0.6).abs() < 1e-12);
        assert!((nn[3].1 + 1.0 / (1.01f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn text_roundtrip_six_decimals() {
        let v = vocab(2);
        let mut e = EmbeddingMatrix::random(6, 3, 1);
        e.biases[4] = 0.25;
        let mut buf = Vec::new();
        e.write_text(&v, &mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        let line = first.lines().next().unwrap();
        assert!(line.starts_with("<pad> "));
        assert_eq!(line.split(' ').nth(1).unwrap().split('.').nth(1).unwrap().len(), 6);
        let mut back = EmbeddingMatrix::read_text(&v, &buf[..]).unwrap();
        let mut bbuf = Vec::new();
        e.write_biases(&v, &mut bbuf).unwrap();
        back.read_biases(&v, &bbuf[..]).unwrap();
        for (a, b) in e.vectors.iter().zip(&back.vectors) {
            assert!((a - b).abs() <= 5e-7);
        }
        assert_eq!(back.biases[4], 0.25);
    }

    #[test]
    fn alpha_roles() {
        let mut cfg = JointTrainConfig::default();
        assert_eq!(cfg.resolved().weight_exponent, 0.75);
        cfg.alpha_role = AlphaRole::WeightExponent;
        assert_eq!(cfg.resolved().weight_exponent, 0.01);
        cfg.alpha_role = AlphaRole::LearningRate;
        assert_eq!(cfg.resolved().learning_rate, 0.01);
        assert!(cfg.validate().is_ok());
        cfg.weight_exponent = 0.0;
        cfg.alpha_role = AlphaRole::Unused;
        assert!(cfg.validate().is_err());
    }
}
