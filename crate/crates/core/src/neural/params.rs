use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::jointembed::EmbeddingMatrix;

/// Uniform init range for every weight matrix.
pub const INIT_SCALE: f64 = 0.08;

/// Optimizer group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Embedding,
    Encoder,
    Decoder,
}

/// All trainable tensors. Gradients use the same layout.
///
/// LSTM gates are stacked `[input, forget, cell, output]` along the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `|V| x d`
    pub embedding: Tensor,
    /// `4d x d`, `4d x d`, `4d`
    pub enc_wx: Tensor,
    pub enc_wh: Tensor,
    pub enc_b: Tensor,
    /// Input is `[embedding(y_prev); context]`: `4d x 2d`, `4d x d`, `4d`
    pub dec_wx: Tensor,
    pub dec_wh: Tensor,
    pub dec_b: Tensor,
    /// `W_c [s; h] = W_query s + W_state h`, each `d x d`; scoring vector `d`
    pub attn_wq: Tensor,
    pub attn_wh: Tensor,
    pub attn_v: Tensor,
    /// Over `[s_t; c_t]`: `|V| x 2d`, `|V|`
    pub out_w: Tensor,
    pub out_b: Tensor,
    /// Over `[h; c]`: `d x 2d`; scores `i_c x d`
    pub intent_wi: Tensor,
    pub intent_wo: Tensor,
}

pub const TENSOR_NAMES: [&str; 14] = [
    "embedding",
    "encoder.w_input",
    "encoder.w_hidden",
    "encoder.bias",
    "decoder.w_input",
    "decoder.w_hidden",
    "decoder.bias",
    "attention.w_query",
    "attention.w_state",
    "attention.v",
    "output.w",
    "output.b",
    "intent.w_i",
    "intent.w_o",
];

impl Weights {
    pub fn tensors(&self) -> [&Tensor; 14] {
        [
            &self.embedding,
            &self.enc_wx,
            &self.enc_wh,
            &self.enc_b,
            &self.dec_wx,
            &self.dec_wh,
            &self.dec_b,
            &self.attn_wq,
            &self.attn_wh,
            &self.attn_v,
            &self.out_w,
            &self.out_b,
            &self.intent_wi,
            &self.intent_wo,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 14] {
        [
            &mut self.embedding,
            &mut self.enc_wx,
            &mut self.enc_wh,
            &mut self.enc_b,
            &mut self.dec_wx,
            &mut self.dec_wh,
            &mut self.dec_b,
            &mut self.attn_wq,
            &mut self.attn_wh,
            &mut self.attn_v,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.intent_wi,
            &mut self.intent_wo,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        TENSOR_NAMES.into_iter().zip(self.tensors())
    }

    pub fn zeros(v: usize, d: usize, n_intents: usize) -> Weights {
        Weights {
            embedding: Tensor::zeros(v, d),
            enc_wx: Tensor::zeros(4 * d, d),
            enc_wh: Tensor::zeros(4 * d, d),
            enc_b: Tensor::zeros(4 * d, 1),
            dec_wx: Tensor::zeros(4 * d, 2 * d),
            dec_wh: Tensor::zeros(4 * d, d),
            dec_b: Tensor::zeros(4 * d, 1),
            attn_wq: Tensor::zeros(d, d),
            attn_wh: Tensor::zeros(d, d),
            attn_v: Tensor::zeros(d, 1),
            out_w: Tensor::zeros(v, 2 * d),
            out_b: Tensor::zeros(v, 1),
            intent_wi: Tensor::zeros(d, 2 * d),
            intent_wo: Tensor::zeros(n_intents, d),
        }
    }

    pub fn zeros_like(&self) -> Weights {
        let t = self.tensors();
        Weights {
            embedding: t[0].zeros_like(),
            enc_wx: t[1].zeros_like(),
            enc_wh: t[2].zeros_like(),
            enc_b: t[3].zeros_like(),
            dec_wx: t[4].zeros_like(),
            dec_wh: t[5].zeros_like(),
            dec_b: t[6].zeros_like(),
            attn_wq: t[7].zeros_like(),
            attn_wh: t[8].zeros_like(),
            attn_v: t[9].zeros_like(),
            out_w: t[10].zeros_like(),
            out_b: t[11].zeros_like(),
            intent_wi: t[12].zeros_like(),
            intent_wo: t[13].zeros_like(),
        }
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

pub fn group_of(name: &str) -> ParamGroup {
    match name.split('.').next() {
        Some("embedding") => ParamGroup::Embedding,
        Some("encoder") | Some("intent") => ParamGroup::Encoder,
        _ => ParamGroup::Decoder,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub vocab_size: usize,
    pub n_intents: usize,
    pub weights: Weights,
}

impl ModelParams {
    /// Fresh weights around the given embeddings; the hidden size is the
    /// embedding dimension.
    pub fn new(embedding: &EmbeddingMatrix, n_intents: usize, seed: u64) -> Result<Self> {
        let (v, d) = (embedding.rows(), embedding.dim());
        if d == 0 || v == 0 || n_intents == 0 {
            return Err(Error::Validation(format!(
                "model needs non-empty vocabulary, dimension and intent set (|V|={v}, d={d}, i_c={n_intents})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |r, c| Tensor::uniform(r, c, INIT_SCALE, &mut rng);
        let mut weights = Weights {
            embedding: Tensor::from_vec(v, d, embedding.vectors.clone()),
            enc_wx: u(4 * d, d),
            enc_wh: u(4 * d, d),
            enc_b: Tensor::zeros(4 * d, 1),
            dec_wx: u(4 * d, 2 * d),
            dec_wh: u(4 * d, d),
            dec_b: Tensor::zeros(4 * d, 1),
            attn_wq: u(d, d),
            attn_wh: u(d, d),
            attn_v: u(d, 1),
            out_w: u(v, 2 * d),
            out_b: Tensor::zeros(v, 1),
            intent_wi: u(d, 2 * d),
            intent_wo: u(n_intents, d),
        };
        // forget gate bias
        weights.enc_b.data[d..2 * d].fill(1.0);
        weights.dec_b.data[d..2 * d].fill(1.0);
        Ok(ModelParams {
            dim: d,
            vocab_size: v,
            n_intents,
            weights,
        })
    }

    /// All weights zero, forget biases included.
    pub fn zeros(vocab_size: usize, dim: usize, n_intents: usize) -> Self {
        ModelParams {
            dim,
            vocab_size,
            n_intents,
            weights: Weights::zeros(vocab_size, dim, n_intents),
        }
    }

    pub fn embedding_row(&self, id: usize) -> &[f64] {
        self.weights.embedding.row(id)
    }

    pub fn validate(&self) -> Result<()> {
        let (v, d, c) = (self.vocab_size, self.dim, self.n_intents);
        let expected: [(usize, usize); 14] = [
            (v, d),
            (4 * d, d),
            (4 * d, d),
            (4 * d, 1),
            (4 * d, 2 * d),
            (4 * d, d),
            (4 * d, 1),
            (d, d),
            (d, d),
            (d, 1),
            (v, 2 * d),
            (v, 1),
            (d, 2 * d),
            (c, d),
        ];
        for ((name, t), (r, cols)) in self.weights.named().zip(expected) {
            if t.rows != r || t.cols != cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {}x{}, expected {r}x{cols}",
                    t.rows, t.cols
                )));
            }
        }
        if !self.weights.is_finite() {
            return Err(Error::Numeric("model weights contain non-finite values".into()));
        }
        Ok(())
    }
}
