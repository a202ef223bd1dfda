use std::io::Write;
use std::ops::ControlFlow;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, EntityIndex, IntentMode, LossBreakdown, LossConfig};
use super::params::{group_of, ModelParams, ParamGroup, Weights, TENSOR_NAMES};
use super::tensor::Tensor;
use crate::corpus::TrainingPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub teacher_forcing: bool,
    pub fine_tune_embeddings: bool,
    /// Include the intent cross-entropy term.
    pub intent_loss: bool,
    /// Include the entity cosine term.
    pub entity_loss: bool,
    pub intent_mode: IntentMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 128,
            encoder_lr: 1e-4,
            decoder_lr: 5e-4,
            grad_clip_norm: 50.0,
            seed: 42,
            teacher_forcing: true,
            fine_tune_embeddings: false,
            intent_loss: true,
            entity_loss: true,
            intent_mode: IntentMode::Final,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_lr", self.encoder_lr),
            ("decoder_lr", self.decoder_lr),
            ("grad_clip_norm", self.grad_clip_norm),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            intent: self.intent_loss,
            entity: self.entity_loss,
            intent_mode: self.intent_mode,
            fine_tune_embeddings: self.fine_tune_embeddings,
            teacher_forcing: self.teacher_forcing,
        }
    }

    fn learning_rate(&self, group: ParamGroup) -> Option<f64> {
        match group {
            ParamGroup::Embedding => self.fine_tune_embeddings.then_some(self.encoder_lr),
            ParamGroup::Encoder => Some(self.encoder_lr),
            ParamGroup::Decoder => Some(self.decoder_lr),
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Weights, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam with per-tensor learning rates.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lrs: [Option<f64>; 14],
    m: Weights,
    v: Weights,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let lrs = TENSOR_NAMES.map(|name| cfg.learning_rate(group_of(name)));
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            lrs,
            m: params.weights.zeros_like(),
            v: params.weights.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Weights) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let tensors = params.weights.tensors_mut();
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((w, g), m), v), lr) in tensors.into_iter().zip(grads).zip(ms).zip(vs).zip(self.lrs) {
            let Some(lr) = lr else { continue };
            adam_update(w, g, m, v, lr, b1, b2, eps, c1, c2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(w: &mut Tensor, g: &Tensor, m: &mut Tensor, v: &mut Tensor, lr: f64, b1: f64, b2: f64, eps: f64, c1: f64, c2: f64) {
    for k in 0..w.data.len() {
        let gk = g.data[k];
        m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
        v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
        let mhat = m.data[k] / c1;
        let vhat = v.data[k] / c2;
        w.data[k] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Training-set averages over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub intent_acc: f64,
    pub token_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,vocab_loss,intent_loss,entity_loss,total,intent_acc";

pub fn write_train_log<W: Write>(log: &[EpochRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRAIN_LOG_HEADER}")?;
    for r in log {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.loss.vocab_loss, r.loss.intent_loss, r.loss.entity_loss, r.loss.total, r.intent_acc
        )?;
    }
    Ok(())
}

pub fn train(params: ModelParams, pairs: &[TrainingPair], entities: &EntityIndex, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(params, pairs, entities, cfg, |_| ControlFlow::Continue(()))
}

/// Minibatch Adam training. Batch order comes from a seeded shuffle per
/// epoch; losses in the log are measured on each batch before its update.
/// `on_epoch` may stop training early.
pub fn train_with(
    mut params: ModelParams,
    pairs: &[TrainingPair],
    entities: &EntityIndex,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    if pairs.is_empty() {
        return Err(Error::Validation("no training pairs".into()));
    }
    let loss_cfg = cfg.loss_config();
    let mut adam = Adam::new(&params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let (mut tokens, mut correct, mut intents) = (0usize, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(idx.iter().map(|&i| pairs[i].clone()));
            let (stats, mut grads) = backward(&params, &batch, entities, &loss_cfg).map_err(|e| match e {
                Error::Numeric(detail) => Error::NonFinite {
                    epoch,
                    batch: Some(b),
                    detail,
                },
                other => other,
            })?;
            if !stats.loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: Some(b),
                    detail: format!("loss {:?}", stats.loss),
                });
            }
            let norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: Some(b),
                    detail: format!("gradient norm {norm}"),
                });
            }
            debug!("epoch {epoch} batch {b}: total {:.6} grad norm {norm:.4}", stats.loss.total);
            adam.step(&mut params, &grads);

            // token loss weighted by tokens, example losses by examples
            sums[0] += stats.loss.vocab_loss * stats.tokens as f64;
            sums[1] += stats.loss.intent_loss * stats.examples as f64;
            sums[2] += stats.loss.entity_loss * stats.examples as f64;
            tokens += stats.tokens;
            correct += stats.correct_tokens;
            intents += stats.intent_correct;
        }
        let n = pairs.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: LossBreakdown::new(sums[0] / tokens as f64, sums[1] / n, sums[2] / n),
            intent_acc: intents as f64 / n,
            token_acc: correct as f64 / tokens as f64,
        };
        debug!(
            "epoch {epoch}: vocab {:.5} intent {:.5} entity {:.5} total {:.5} intent_acc {:.4} token_acc {:.4}",
            record.loss.vocab_loss, record.loss.intent_loss, record.loss.entity_loss, record.loss.total, record.intent_acc, record.token_acc
        );
        log.push(record);
        if on_epoch(&record).is_break() {
            break;
        }
    }
    if !params.weights.is_finite() {
        return Err(Error::NonFinite {
            epoch: log.len(),
            batch: None,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(TrainOutcome { params, log })
}
