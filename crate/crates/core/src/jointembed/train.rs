use std::io::Write;

use log::{debug, info};

use super::objective::{add_corpus_gradient, add_kg_gradient};
use super::{corpus_objective, kg_objective, EmbedOptimizer, EmbeddingMatrix, JointTrainConfig};
use crate::cooccur::{CooccurrenceMatrix, RelationStrengthMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedEpoch {
    pub epoch: usize,
    pub j: f64,
    pub j_c: f64,
    pub j_s: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedTrainOutcome {
    pub embeddings: EmbeddingMatrix,
    /// Objective at the start of each epoch, before its update.
    pub log: Vec<EmbedEpoch>,
}

impl EmbedTrainOutcome {
    /// CSV `epoch,J,J_C,J_S`.
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,J,J_C,J_S")?;
        for e in &self.log {
            writeln!(w, "{},{},{},{}", e.epoch, e.j, e.j_c, e.j_s)?;
        }
        Ok(())
    }
}

/// Full-batch training of `J_C + lambda * J_S`.
pub fn train_embeddings(
    x: &CooccurrenceMatrix,
    r: &RelationStrengthMatrix,
    cfg: &JointTrainConfig,
) -> Result<EmbedTrainOutcome> {
    if r.dim() != x.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            actual: r.dim(),
        });
    }
    run(x, Some(r), cfg)
}

/// Plain GloVe: the corpus objective alone.
pub fn train_glove(x: &CooccurrenceMatrix, cfg: &JointTrainConfig) -> Result<EmbedTrainOutcome> {
    run(x, None, cfg)
}

fn run(
    x: &CooccurrenceMatrix,
    r: Option<&RelationStrengthMatrix>,
    cfg: &JointTrainConfig,
) -> Result<EmbedTrainOutcome> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let mut e = EmbeddingMatrix::random(x.dim(), cfg.dim, cfg.seed);
    let mut accum = EmbeddingMatrix::zeros(x.dim(), cfg.dim);
    let mut log = Vec::with_capacity(cfg.epochs);
    info!(
        "training embeddings: |V|={} d={} lambda={} epochs={} lr={} optimizer={:?}",
        x.dim(),
        cfg.dim,
        if r.is_some() { cfg.lambda } else { 0.0 },
        cfg.epochs,
        cfg.learning_rate,
        cfg.optimizer
    );

    for epoch in 1..=cfg.epochs {
        let j_c = corpus_objective(&e, x, &cfg);
        let (j_s, j) = match r {
            Some(r) => {
                let j_s = kg_objective(&e, r);
                (j_s, j_c + cfg.lambda * j_s)
            }
            None => (0.0, j_c),
        };
        if !j.is_finite() {
            let row = e.first_non_finite();
            return Err(Error::NonFinite {
                epoch,
                batch: None,
                detail: format!(
                    "J={j} (J_C={j_c}, J_S={j_s}); first non-finite embedding row: {}",
                    row.map_or("none".to_string(), |r| r.to_string())
                ),
            });
        }
        log.push(EmbedEpoch { epoch, j, j_c, j_s });
        if epoch % 50 == 0 || epoch == 1 {
            debug!("epoch {epoch}: J={j:.6} J_C={j_c:.6} J_S={j_s:.6}");
        }

        let mut grad = EmbeddingMatrix::zeros(x.dim(), cfg.dim);
        add_corpus_gradient(&e, x, &cfg, &mut grad);
        if let Some(r) = r {
            add_kg_gradient(&e, r, cfg.lambda, &mut grad);
        }
        step(&mut e, &grad, &mut accum, &cfg);
    }
    Ok(EmbedTrainOutcome { embeddings: e, log })
}

/// One update with decoupled weight decay: `θ ← θ(1 − lr·wd) − lr·step(g)`.
fn step(e: &mut EmbeddingMatrix, g: &EmbeddingMatrix, accum: &mut EmbeddingMatrix, cfg: &JointTrainConfig) {
    let lr = cfg.learning_rate;
    let decay = 1.0 - lr * cfg.weight_decay;
    let params = e.vectors.iter_mut().chain(e.biases.iter_mut());
    let grads = g.vectors.iter().chain(&g.biases);
    let accs = accum.vectors.iter_mut().chain(accum.biases.iter_mut());
    match cfg.optimizer {
        EmbedOptimizer::GradientDescent => {
            for (p, &gv) in params.zip(grads) {
                *p = *p * decay - lr * gv;
            }
        }
        EmbedOptimizer::AdaGrad => {
            for ((p, &gv), a) in params.zip(grads).zip(accs) {
                *a += gv * gv;
                *p = *p * decay - lr * gv / (a.sqrt() + 1e-8);
            }
        }
    }
}
