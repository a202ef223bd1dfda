use super::{EmbeddingGradient, EmbeddingMatrix, JointTrainConfig};
use crate::cooccur::{CooccurrenceMatrix, RelationStrengthMatrix};

/// GloVe weighting `(x / x_max)^exponent`, capped at 1.
pub fn glove_weight(x: f64, x_max: f64, exponent: f64) -> f64 {
    if x >= x_max {
        1.0
    } else if x <= 0.0 {
        0.0
    } else {
        (x / x_max).powf(exponent)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn multiplicity(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        2.0
    }
}

/// `1/2 sum_ij f(X_ij) (w_i.w_j + b_i + b_j - ln X_ij)^2` over the full
/// symmetric matrix.
pub fn corpus_objective(e: &EmbeddingMatrix, x: &CooccurrenceMatrix, cfg: &JointTrainConfig) -> f64 {
    let cfg = cfg.resolved();
    let mut total = 0.0;
    for (i, j, xij) in x.counts.iter_upper() {
        if xij <= 0.0 {
            continue;
        }
        let f = glove_weight(xij, cfg.x_max, cfg.weight_exponent);
        let r = dot(e.row(i), e.row(j)) + e.biases[i] + e.biases[j] - xij.ln();
        total += multiplicity(i, j) * f * r * r;
    }
    0.5 * total
}

/// `1/2 sum_ij R_ij |w_i - w_j|^2` over the full symmetric matrix.
pub fn kg_objective(e: &EmbeddingMatrix, r: &RelationStrengthMatrix) -> f64 {
    let mut total = 0.0;
    for (i, j, rij) in r.strength.iter_upper() {
        if i == j || rij <= 0.0 {
            continue;
        }
        let d2: f64 = e
            .row(i)
            .iter()
            .zip(e.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += 2.0 * rij * d2;
    }
    0.5 * total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub corpus: f64,
    pub kg: f64,
    pub total: f64,
}

pub fn joint_objective(
    e: &EmbeddingMatrix,
    x: &CooccurrenceMatrix,
    r: &RelationStrengthMatrix,
    lambda: f64,
    cfg: &JointTrainConfig,
) -> ObjectiveParts {
    let corpus = corpus_objective(e, x, cfg);
    let kg = kg_objective(e, r);
    ObjectiveParts {
        corpus,
        kg,
        total: corpus + lambda * kg,
    }
}

pub(super) fn add_corpus_gradient(
    e: &EmbeddingMatrix,
    x: &CooccurrenceMatrix,
    cfg: &JointTrainConfig,
    grad: &mut EmbeddingGradient,
) {
    let cfg = cfg.resolved();
    let d = e.dim();
    for (i, j, xij) in x.counts.iter_upper() {
        if xij <= 0.0 {
            continue;
        }
        let f = glove_weight(xij, cfg.x_max, cfg.weight_exponent);
        let (wi, wj) = (e.row(i), e.row(j));
        let r = dot(wi, wj) + e.biases[i] + e.biases[j] - xij.ln();
        // d/dθ of (m/2) f r^2 = m f r dr/dθ, m the symmetric multiplicity
        let g = 2.0 * f * r;
        if i == j {
            let gi = &mut grad.vectors[i * d..(i + 1) * d];
            for k in 0..d {
                gi[k] += g * wi[k];
            }
            grad.biases[i] += g;
        } else {
            for k in 0..d {
                grad.vectors[i * d + k] += g * wj[k];
                grad.vectors[j * d + k] += g * wi[k];
            }
            grad.biases[i] += g;
            grad.biases[j] += g;
        }
    }
}

pub(super) fn add_kg_gradient(
    e: &EmbeddingMatrix,
    r: &RelationStrengthMatrix,
    lambda: f64,
    grad: &mut EmbeddingGradient,
) {
    let d = e.dim();
    for (i, j, rij) in r.strength.iter_upper() {
        if i == j || rij <= 0.0 {
            continue;
        }
        let s = lambda * 2.0 * rij;
        let (wi, wj) = (e.row(i), e.row(j));
        for k in 0..d {
            let diff = s * (wi[k] - wj[k]);
            grad.vectors[i * d + k] += diff;
            grad.vectors[j * d + k] -= diff;
        }
    }
}

/// Analytic gradient of `J_C + lambda * J_S`. Biases receive no KG term.
pub fn joint_gradients(
    e: &EmbeddingMatrix,
    x: &CooccurrenceMatrix,
    r: &RelationStrengthMatrix,
    lambda: f64,
    cfg: &JointTrainConfig,
) -> EmbeddingGradient {
    let mut grad = EmbeddingMatrix::zeros(e.rows(), e.dim());
    add_corpus_gradient(e, x, cfg, &mut grad);
    add_kg_gradient(e, r, lambda, &mut grad);
    grad
}
