use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{ModelParams, Weights};
use super::tensor::{argmax, axpy, concat, dot, log_softmax_at, sigmoid, softmax, Tensor};
use crate::corpus::{TokenId, TrainingPair, Vocabulary};
use crate::error::{Error, Result};

/// Cached activations of one LSTM cell application.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn lstm_forward(wx: &Tensor, wh: &Tensor, b: &Tensor, x: Vec<f64>, h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
    let d = h_prev.len();
    let mut z = b.data.clone();
    wx.matvec_add(&x, &mut z);
    wh.matvec_add(h_prev, &mut z);
    let i: Vec<f64> = z[..d].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[d..2 * d].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * d..3 * d].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * d..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..d).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..d).map(|k| o[k] * tanh_c[k]).collect();
    LstmCache {
        x,
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
        c,
        h,
    }
}

/// Returns `(dx, dh_prev, dc_prev)`.
fn lstm_backward(
    wx: &Tensor,
    wh: &Tensor,
    gwx: &mut Tensor,
    gwh: &mut Tensor,
    gb: &mut Tensor,
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = dh.len();
    let mut dz = vec![0.0; 4 * d];
    let mut dc_prev = vec![0.0; d];
    for k in 0..d {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dct * g * i * (1.0 - i);
        dz[d + k] = dct * cache.c_prev[k] * f * (1.0 - f);
        dz[2 * d + k] = dct * i * (1.0 - g * g);
        dz[3 * d + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dct * f;
    }
    gwx.outer_add(&dz, &cache.x);
    gwh.outer_add(&dz, &cache.h_prev);
    axpy(1.0, &dz, &mut gb.data);
    let mut dx = vec![0.0; cache.x.len()];
    wx.matvec_t_add(&dz, &mut dx);
    let mut dh_prev = vec![0.0; d];
    wh.matvec_t_add(&dz, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// Encoder hidden states `h_1..h_m` with everything backprop needs.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    input: Vec<TokenId>,
    steps: Vec<LstmCache>,
    /// `W_state h_j`, shared by every attention query.
    keys: Vec<Vec<f64>>,
}

impl EncoderTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden(&self, j: usize) -> &[f64] {
        &self.steps[j].h
    }

    pub fn hidden_states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.h.as_slice())
    }

    pub fn final_state(&self) -> &[f64] {
        &self.steps.last().expect("non-empty trace").h
    }

    pub fn final_cell(&self) -> &[f64] {
        &self.steps.last().expect("non-empty trace").c
    }
}

/// Runs the encoder LSTM from a zero state over the embedded input.
pub fn encode(params: &ModelParams, input_ids: &[TokenId]) -> Result<EncoderTrace> {
    if input_ids.is_empty() {
        return Err(Error::Validation("encoder input is empty".into()));
    }
    if let Some(bad) = input_ids.iter().find(|t| t.index() >= params.vocab_size) {
        return Err(Error::Validation(format!("token id {bad} outside vocabulary")));
    }
    let w = &params.weights;
    let d = params.dim;
    let mut h = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut steps = Vec::with_capacity(input_ids.len());
    for &tok in input_ids {
        let x = w.embedding.row(tok.index()).to_vec();
        let cache = lstm_forward(&w.enc_wx, &w.enc_wh, &w.enc_b, x, &h, &c);
        h.clone_from(&cache.h);
        c.clone_from(&cache.c);
        steps.push(cache);
    }
    let keys = steps.iter().map(|s| w.attn_wh.matvec(&s.h)).collect();
    Ok(EncoderTrace {
        input: input_ids.to_vec(),
        steps,
        keys,
    })
}

#[derive(Debug, Clone)]
pub(crate) struct AttnCache {
    query: Vec<f64>,
    /// `tanh(W_query q + W_state h_j)` per source position.
    act: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    context: Vec<f64>,
}

fn attend_cached(w: &Weights, query: &[f64], trace: &EncoderTrace) -> AttnCache {
    let uq = w.attn_wq.matvec(query);
    let act: Vec<Vec<f64>> = trace
        .keys
        .iter()
        .map(|k| uq.iter().zip(k).map(|(a, b)| (a + b).tanh()).collect())
        .collect();
    let scores: Vec<f64> = act.iter().map(|a| dot(&w.attn_v.data, a)).collect();
    let alpha = softmax(&scores);
    let mut context = vec![0.0; query.len()];
    for (a, s) in alpha.iter().zip(&trace.steps) {
        axpy(*a, &s.h, &mut context);
    }
    AttnCache {
        query: query.to_vec(),
        act,
        alpha,
        context,
    }
}

/// Accumulates attention gradients; returns `d query`.
fn attend_backward(
    w: &Weights,
    g: &mut Weights,
    cache: &AttnCache,
    trace: &EncoderTrace,
    dctx: &[f64],
    dkeys: &mut [Vec<f64>],
    dhidden: &mut [Vec<f64>],
) -> Vec<f64> {
    let d = dctx.len();
    let dalpha: Vec<f64> = trace.steps.iter().map(|s| dot(dctx, &s.h)).collect();
    let mean: f64 = cache.alpha.iter().zip(&dalpha).map(|(a, da)| a * da).sum();
    let mut duq = vec![0.0; d];
    for j in 0..trace.len() {
        axpy(cache.alpha[j], dctx, &mut dhidden[j]);
        let de = cache.alpha[j] * (dalpha[j] - mean);
        if de == 0.0 {
            continue;
        }
        let act = &cache.act[j];
        axpy(de, act, &mut g.attn_v.data);
        for k in 0..d {
            let du = de * w.attn_v.data[k] * (1.0 - act[k] * act[k]);
            duq[k] += du;
            dkeys[j][k] += du;
        }
    }
    g.attn_wq.outer_add(&duq, &cache.query);
    let mut dq = vec![0.0; d];
    w.attn_wq.matvec_t_add(&duq, &mut dq);
    dq
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
}

/// Additive attention of `query` over the encoder states.
pub fn attend(params: &ModelParams, query: &[f64], trace: &EncoderTrace) -> Attention {
    let c = attend_cached(&params.weights, query, trace);
    Attention {
        alpha: c.alpha,
        context: c.context,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl DecoderState {
    /// Decoder starts from the encoder's final hidden and cell state.
    pub fn initial(trace: &EncoderTrace) -> Self {
        DecoderState {
            hidden: trace.final_state().to_vec(),
            cell: trace.final_cell().to_vec(),
        }
    }
}

/// One decoder time step.
#[derive(Debug, Clone)]
pub struct DecoderStep {
    pub y_prev: TokenId,
    pub state: DecoderState,
    pub context: Vec<f64>,
    pub alpha: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    attn: AttnCache,
    lstm: LstmCache,
}

impl DecoderStep {
    pub fn argmax(&self) -> TokenId {
        TokenId::from_index(argmax(&self.probs))
    }
}

/// Attends with the previous state, advances the decoder LSTM on
/// `[embedding(y_prev); c_t]` and projects `[s_t; c_t]` to the vocabulary.
pub fn decode_step(params: &ModelParams, y_prev: TokenId, prev: &DecoderState, trace: &EncoderTrace) -> DecoderStep {
    let w = &params.weights;
    let attn = attend_cached(w, &prev.hidden, trace);
    let x = concat(w.embedding.row(y_prev.index()), &attn.context);
    let lstm = lstm_forward(&w.dec_wx, &w.dec_wh, &w.dec_b, x, &prev.hidden, &prev.cell);
    let out_in = concat(&lstm.h, &attn.context);
    let mut logits = w.out_b.data.clone();
    w.out_w.matvec_add(&out_in, &mut logits);
    let probs = softmax(&logits);
    DecoderStep {
        y_prev,
        state: DecoderState {
            hidden: lstm.h.clone(),
            cell: lstm.c.clone(),
        },
        context: attn.context.clone(),
        alpha: attn.alpha.clone(),
        logits,
        probs,
        attn,
        lstm,
    }
}

/// How the intent head reads the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentMode {
    /// One prediction from the final encoder state.
    #[default]
    Final,
    /// Scores averaged over predictions from every encoder state.
    PerStepMean,
}

#[derive(Debug, Clone)]
struct IntentQuery {
    index: usize,
    attn: AttnCache,
    input: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Debug, Clone)]
struct IntentCache {
    queries: Vec<IntentQuery>,
    scores: Vec<f64>,
}

fn intent_forward(w: &Weights, trace: &EncoderTrace, mode: IntentMode, n_intents: usize) -> IntentCache {
    let indices: Vec<usize> = match mode {
        IntentMode::Final => vec![trace.len() - 1],
        IntentMode::PerStepMean => (0..trace.len()).collect(),
    };
    let scale = 1.0 / indices.len() as f64;
    let mut scores = vec![0.0; n_intents];
    let queries = indices
        .into_iter()
        .map(|index| {
            let h = trace.hidden(index);
            let attn = attend_cached(w, h, trace);
            let input = concat(h, &attn.context);
            let act: Vec<f64> = w.intent_wi.matvec(&input).into_iter().map(f64::tanh).collect();
            let s = w.intent_wo.matvec(&act);
            axpy(scale, &s, &mut scores);
            IntentQuery {
                index,
                attn,
                input,
                act,
            }
        })
        .collect();
    IntentCache { queries, scores }
}

/// Unnormalized intent scores `W_o tanh(W_i [h_m; c])`, with `c` attended
/// from the final encoder state.
pub fn predict_intent(params: &ModelParams, trace: &EncoderTrace) -> Vec<f64> {
    predict_intent_with(params, trace, IntentMode::Final)
}

pub fn predict_intent_with(params: &ModelParams, trace: &EncoderTrace, mode: IntentMode) -> Vec<f64> {
    intent_forward(&params.weights, trace, mode, params.n_intents).scores
}

/// Entity token ids of a vocabulary, plus a membership mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityIndex {
    ids: Vec<TokenId>,
    mask: Vec<bool>,
    /// Token strings parallel to `ids`, for diagnostics.
    names: Vec<String>,
}

impl EntityIndex {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let ids: Vec<TokenId> = vocab.entity_ids().collect();
        let mut mask = vec![false; vocab.len()];
        for id in &ids {
            mask[id.index()] = true;
        }
        let names = ids.iter().map(|&id| vocab.token(id).to_string()).collect();
        EntityIndex { ids, mask, names }
    }

    pub fn from_ids(vocab_size: usize, ids: impl IntoIterator<Item = TokenId>) -> Self {
        let mut mask = vec![false; vocab_size];
        for id in ids {
            mask[id.index()] = true;
        }
        let ids: Vec<TokenId> = (0..vocab_size).filter(|&i| mask[i]).map(TokenId::from_index).collect();
        let names = ids.iter().map(|id| format!("#{id}")).collect();
        EntityIndex { ids, mask, names }
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.mask.get(id.index()).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    fn name(&self, id: TokenId) -> &str {
        self.ids.binary_search(&id).map_or("?", |k| self.names[k].as_str())
    }
}

/// Cosine-distance term at one entity position.
#[derive(Debug, Clone)]
struct EntityTerm {
    step: usize,
    target: TokenId,
    /// Decoder distribution renormalized over entity tokens.
    ptilde: Vec<f64>,
    phi: Vec<f64>,
    norm_target: f64,
    norm_phi: f64,
    cos: f64,
}

fn entity_term(w: &Weights, entities: &EntityIndex, step: usize, logits: &[f64], target: TokenId) -> Result<EntityTerm> {
    let restricted: Vec<f64> = entities.ids.iter().map(|id| logits[id.index()]).collect();
    let ptilde = softmax(&restricted);
    let d = w.embedding.cols;
    let mut phi = vec![0.0; d];
    for (p, id) in ptilde.iter().zip(&entities.ids) {
        axpy(*p, w.embedding.row(id.index()), &mut phi);
    }
    let a = w.embedding.row(target.index());
    let norm_target = dot(a, a).sqrt();
    let norm_phi = dot(&phi, &phi).sqrt();
    if norm_target == 0.0 {
        return Err(Error::Numeric(format!(
            "entity {} has a zero-norm embedding",
            entities.name(target)
        )));
    }
    if norm_phi == 0.0 {
        return Err(Error::Numeric(format!(
            "expected entity embedding at step {step} (target {}) has zero norm",
            entities.name(target)
        )));
    }
    let cos = (dot(a, &phi) / (norm_target * norm_phi)).clamp(-1.0, 1.0);
    Ok(EntityTerm {
        step,
        target,
        ptilde,
        phi,
        norm_target,
        norm_phi,
        cos,
    })
}

fn entity_terms(w: &Weights, entities: &EntityIndex, steps: &[DecoderStep], target_ids: &[TokenId]) -> Result<Vec<EntityTerm>> {
    steps
        .iter()
        .zip(target_ids)
        .enumerate()
        .filter(|(_, (_, t))| entities.contains(**t))
        .map(|(k, (s, &t))| entity_term(w, entities, k, &s.logits, t))
        .collect()
}

fn mean_distance(terms: &[EntityTerm]) -> f64 {
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().map(|t| 1.0 - t.cos).sum::<f64>() / terms.len() as f64
    }
}

/// Mean over entity positions of `1 - cos(embedding(target), expected entity
/// embedding)`; 0 when the target has no entity.
pub fn entity_loss(params: &ModelParams, steps: &[DecoderStep], target_ids: &[TokenId], entities: &EntityIndex) -> Result<f64> {
    if steps.len() != target_ids.len() {
        return Err(Error::Dimension {
            expected: target_ids.len(),
            actual: steps.len(),
        });
    }
    Ok(mean_distance(&entity_terms(&params.weights, entities, steps, target_ids)?))
}

/// Reporting-only variant that takes the argmax entity instead of the
/// expectation. Not differentiable.
pub fn entity_loss_argmax(params: &ModelParams, steps: &[DecoderStep], target_ids: &[TokenId], entities: &EntityIndex) -> f64 {
    let w = &params.weights;
    let mut total = 0.0;
    let mut n = 0usize;
    for (s, &t) in steps.iter().zip(target_ids) {
        if !entities.contains(t) || entities.ids.is_empty() {
            continue;
        }
        let best = entities
            .ids
            .iter()
            .copied()
            .fold(entities.ids[0], |b, id| if s.logits[id.index()] > s.logits[b.index()] { id } else { b });
        let (a, p) = (w.embedding.row(t.index()), w.embedding.row(best.index()));
        total += 1.0 - crate::jointembed::cosine(a, p);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vocab_loss: f64,
    pub intent_loss: f64,
    pub entity_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(vocab_loss: f64, intent_loss: f64, entity_loss: f64) -> Self {
        LossBreakdown {
            vocab_loss,
            intent_loss,
            entity_loss,
            total: vocab_loss + intent_loss + entity_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vocab_loss.is_finite() && self.intent_loss.is_finite() && self.entity_loss.is_finite() && self.total.is_finite()
    }
}

/// Which terms of the multi-task objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossConfig {
    pub intent: bool,
    pub entity: bool,
    pub intent_mode: IntentMode,
    pub fine_tune_embeddings: bool,
    /// Feed gold previous tokens; otherwise the decoder's own argmax.
    pub teacher_forcing: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            intent: true,
            entity: true,
            intent_mode: IntentMode::Final,
            fine_tune_embeddings: false,
            teacher_forcing: true,
        }
    }
}

/// Teacher-forced forward pass over one example.
struct ExampleForward {
    trace: EncoderTrace,
    steps: Vec<DecoderStep>,
    intent: Option<IntentCache>,
    entity: Vec<EntityTerm>,
    ce_sum: f64,
    intent_ce: f64,
    correct_tokens: usize,
    intent_correct: bool,
}

fn forward_example(params: &ModelParams, pair: &TrainingPair, entities: &EntityIndex, cfg: &LossConfig) -> Result<ExampleForward> {
    let w = &params.weights;
    let trace = encode(params, &pair.input)?;
    let mut state = DecoderState::initial(&trace);
    let mut y_prev = TokenId::SOS;
    let mut steps = Vec::with_capacity(pair.target.len());
    let mut ce_sum = 0.0;
    let mut correct_tokens = 0;
    for &target in &pair.target {
        let step = decode_step(params, y_prev, &state, &trace);
        ce_sum -= log_softmax_at(&step.logits, target.index());
        let predicted = step.argmax();
        if predicted == target {
            correct_tokens += 1;
        }
        state = step.state.clone();
        y_prev = if cfg.teacher_forcing { target } else { predicted };
        steps.push(step);
    }
    let entity = if cfg.entity {
        entity_terms(w, entities, &steps, &pair.target)?
    } else {
        Vec::new()
    };
    let intent_cache = intent_forward(w, &trace, cfg.intent_mode, params.n_intents);
    let gold = pair.intent.id;
    if gold >= params.n_intents {
        return Err(Error::Validation(format!(
            "intent id {gold} outside the {} model classes",
            params.n_intents
        )));
    }
    let intent_correct = argmax(&intent_cache.scores) == gold;
    let (intent, intent_ce) = if cfg.intent {
        let ce = -log_softmax_at(&intent_cache.scores, gold);
        (Some(intent_cache), ce)
    } else {
        (None, 0.0)
    };
    Ok(ExampleForward {
        trace,
        steps,
        intent,
        entity,
        ce_sum,
        intent_ce,
        correct_tokens,
        intent_correct,
    })
}

/// Loss normalizers for one batch.
struct Scales {
    /// `1 / total target tokens`
    token: f64,
    /// `1 / batch size`
    example: f64,
}

fn backward_example(
    params: &ModelParams,
    pair: &TrainingPair,
    entities: &EntityIndex,
    fwd: &ExampleForward,
    scales: &Scales,
    cfg: &LossConfig,
    g: &mut Weights,
) {
    let w = &params.weights;
    let d = params.dim;
    let m = fwd.trace.len();
    let mut dkeys = vec![vec![0.0; d]; m];
    let mut dhidden = vec![vec![0.0; d]; m];

    // d logits: vocabulary cross-entropy plus entity cosine terms
    let mut dlogits: Vec<Vec<f64>> = fwd
        .steps
        .iter()
        .zip(&pair.target)
        .map(|(s, &t)| {
            let mut dl: Vec<f64> = s.probs.iter().map(|p| p * scales.token).collect();
            dl[t.index()] -= scales.token;
            dl
        })
        .collect();
    if !fwd.entity.is_empty() {
        let weight = scales.example / fwd.entity.len() as f64;
        for term in &fwd.entity {
            entity_backward(w, g, entities, term, weight, cfg.fine_tune_embeddings, &mut dlogits[term.step]);
        }
    }

    let mut ds = vec![0.0; d];
    let mut dcell = vec![0.0; d];
    for (t, step) in fwd.steps.iter().enumerate().rev() {
        let dl = &dlogits[t];
        let out_in = concat(&step.lstm.h, &step.attn.context);
        g.out_w.outer_add(dl, &out_in);
        axpy(1.0, dl, &mut g.out_b.data);
        let mut dout = vec![0.0; 2 * d];
        w.out_w.matvec_t_add(dl, &mut dout);
        let mut dh = dout[..d].to_vec();
        axpy(1.0, &ds, &mut dh);
        let mut dctx = dout[d..].to_vec();

        let (dx, dh_prev, dc_prev) = lstm_backward(&w.dec_wx, &w.dec_wh, &mut g.dec_wx, &mut g.dec_wh, &mut g.dec_b, &step.lstm, &dh, &dcell);
        if cfg.fine_tune_embeddings {
            axpy(1.0, &dx[..d], g.embedding.row_mut(step.y_prev.index()));
        }
        axpy(1.0, &dx[d..], &mut dctx);
        let dq = attend_backward(w, g, &step.attn, &fwd.trace, &dctx, &mut dkeys, &mut dhidden);
        ds = dh_prev;
        axpy(1.0, &dq, &mut ds);
        dcell = dc_prev;
    }
    // s_0 = h_m, cell_0 = c_m
    axpy(1.0, &ds, &mut dhidden[m - 1]);
    let mut dc_enc = dcell;

    if let Some(intent) = &fwd.intent {
        let probs = softmax(&intent.scores);
        let q = intent.queries.len() as f64;
        let dscores: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, p)| (p - f64::from(u8::from(k == pair.intent.id))) * scales.example / q)
            .collect();
        for query in &intent.queries {
            g.intent_wo.outer_add(&dscores, &query.act);
            let mut dact = vec![0.0; d];
            w.intent_wo.matvec_t_add(&dscores, &mut dact);
            let dz: Vec<f64> = dact.iter().zip(&query.act).map(|(da, a)| da * (1.0 - a * a)).collect();
            g.intent_wi.outer_add(&dz, &query.input);
            let mut din = vec![0.0; 2 * d];
            w.intent_wi.matvec_t_add(&dz, &mut din);
            axpy(1.0, &din[..d], &mut dhidden[query.index]);
            let dq = attend_backward(w, g, &query.attn, &fwd.trace, &din[d..], &mut dkeys, &mut dhidden);
            axpy(1.0, &dq, &mut dhidden[query.index]);
        }
    }

    for j in 0..m {
        g.attn_wh.outer_add(&dkeys[j], &fwd.trace.steps[j].h);
        w.attn_wh.matvec_t_add(&dkeys[j], &mut dhidden[j]);
    }

    let mut dh_next = vec![0.0; d];
    for j in (0..m).rev() {
        let mut dh = std::mem::take(&mut dhidden[j]);
        axpy(1.0, &dh_next, &mut dh);
        let (dx, dh_prev, dc_prev) = lstm_backward(&w.enc_wx, &w.enc_wh, &mut g.enc_wx, &mut g.enc_wh, &mut g.enc_b, &fwd.trace.steps[j], &dh, &dc_enc);
        if cfg.fine_tune_embeddings {
            axpy(1.0, &dx, g.embedding.row_mut(fwd.trace.input[j].index()));
        }
        dh_next = dh_prev;
        dc_enc = dc_prev;
    }
}

fn entity_backward(w: &Weights, g: &mut Weights, entities: &EntityIndex, term: &EntityTerm, weight: f64, fine_tune: bool, dlogits: &mut [f64]) {
    let a = w.embedding.row(term.target.index());
    let (na, np, cos) = (term.norm_target, term.norm_phi, term.cos);
    // L = 1 - a.phi / (|a||phi|)
    let dphi: Vec<f64> = a
        .iter()
        .zip(&term.phi)
        .map(|(ak, pk)| -weight * (ak / (na * np) - cos * pk / (np * np)))
        .collect();
    let ids = &entities.ids;
    let gv: Vec<f64> = ids.iter().map(|id| dot(w.embedding.row(id.index()), &dphi)).collect();
    let mean: f64 = term.ptilde.iter().zip(&gv).map(|(p, g)| p * g).sum();
    for ((id, p), gk) in ids.iter().zip(&term.ptilde).zip(&gv) {
        dlogits[id.index()] += p * (gk - mean);
    }
    if fine_tune {
        let da: Vec<f64> = term
            .phi
            .iter()
            .zip(a)
            .map(|(pk, ak)| -weight * (pk / (na * np) - cos * ak / (na * na)))
            .collect();
        axpy(1.0, &da, g.embedding.row_mut(term.target.index()));
        for (id, p) in ids.iter().zip(&term.ptilde) {
            axpy(*p, &dphi, g.embedding.row_mut(id.index()));
        }
    }
}

/// Number of contiguous shards a batch is split into for parallel gradients.
/// Fixed so that summation order, and thus the result, is independent of the
/// thread count.
pub const BATCH_SHARDS: usize = 4;

/// Batch losses plus accuracy counters from the same forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub loss: LossBreakdown,
    pub tokens: usize,
    pub correct_tokens: usize,
    pub examples: usize,
    pub intent_correct: usize,
}

#[derive(Default)]
struct ShardSums {
    ce: f64,
    intent: f64,
    entity: f64,
    tokens: usize,
    correct_tokens: usize,
    intent_correct: usize,
}

impl ShardSums {
    fn add(&mut self, o: &ShardSums) {
        self.ce += o.ce;
        self.intent += o.intent;
        self.entity += o.entity;
        self.tokens += o.tokens;
        self.correct_tokens += o.correct_tokens;
        self.intent_correct += o.intent_correct;
    }
}

fn check_batch(batch: &[TrainingPair]) -> Result<Scales> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let tokens: usize = batch.iter().map(|p| p.target.len()).sum();
    if tokens == 0 {
        return Err(Error::Validation("batch has no target tokens".into()));
    }
    Ok(Scales {
        token: 1.0 / tokens as f64,
        example: 1.0 / batch.len() as f64,
    })
}

fn shard_len(n: usize) -> usize {
    n.div_ceil(BATCH_SHARDS).max(1)
}

fn run_batch(params: &ModelParams, batch: &[TrainingPair], entities: &EntityIndex, cfg: &LossConfig, grads: bool) -> Result<(BatchStats, Option<Weights>)> {
    let scales = check_batch(batch)?;
    let shards: Vec<Result<(ShardSums, Option<Weights>)>> = batch
        .par_chunks(shard_len(batch.len()))
        .map(|chunk| {
            let mut sums = ShardSums::default();
            let mut g = grads.then(|| params.weights.zeros_like());
            for pair in chunk {
                let fwd = forward_example(params, pair, entities, cfg)?;
                sums.ce += fwd.ce_sum;
                sums.intent += fwd.intent_ce;
                sums.entity += mean_distance(&fwd.entity);
                sums.tokens += pair.target.len();
                sums.correct_tokens += fwd.correct_tokens;
                sums.intent_correct += usize::from(fwd.intent_correct);
                if let Some(g) = g.as_mut() {
                    backward_example(params, pair, entities, &fwd, &scales, cfg, g);
                }
            }
            Ok((sums, g))
        })
        .collect();
    let mut total = ShardSums::default();
    let mut grad: Option<Weights> = None;
    for shard in shards {
        let (sums, g) = shard?;
        total.add(&sums);
        match (&mut grad, g) {
            (Some(acc), Some(g)) => acc.add_assign(&g),
            (slot @ None, Some(g)) => *slot = Some(g),
            _ => {}
        }
    }
    let loss = LossBreakdown::new(total.ce * scales.token, total.intent * scales.example, total.entity * scales.example);
    let stats = BatchStats {
        loss,
        tokens: total.tokens,
        correct_tokens: total.correct_tokens,
        examples: batch.len(),
        intent_correct: total.intent_correct,
    };
    Ok((stats, grad))
}

/// Batch losses under teacher forcing. Vocabulary loss is averaged over
/// target tokens, intent and entity losses over examples.
pub fn total_loss(params: &ModelParams, batch: &[TrainingPair], entities: &EntityIndex, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(batch_stats(params, batch, entities, cfg)?.loss)
}

pub fn batch_stats(params: &ModelParams, batch: &[TrainingPair], entities: &EntityIndex, cfg: &LossConfig) -> Result<BatchStats> {
    Ok(run_batch(params, batch, entities, cfg, false)?.0)
}

/// Losses and exact gradients of `total_loss` w.r.t. every weight.
/// The embedding gradient stays zero unless `fine_tune_embeddings` is set.
pub fn backward(params: &ModelParams, batch: &[TrainingPair], entities: &EntityIndex, cfg: &LossConfig) -> Result<(BatchStats, Weights)> {
    let (stats, g) = run_batch(params, batch, entities, cfg, true)?;
    Ok((stats, g.expect("gradient requested")))
}

/// Greedy decoding until EOS or `max_len` tokens. The EOS, if produced,
/// is included.
pub fn generate(params: &ModelParams, input_ids: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    generate_with(params, input_ids, max_len, |step| step.argmax())
}

/// Greedy decoding where `choose` picks each emitted token from the step.
pub fn generate_with(params: &ModelParams, input_ids: &[TokenId], max_len: usize, mut choose: impl FnMut(&DecoderStep) -> TokenId) -> Result<Vec<TokenId>> {
    let trace = encode(params, input_ids)?;
    let mut state = DecoderState::initial(&trace);
    let mut y = TokenId::SOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let step = decode_step(params, y, &state, &trace);
        y = choose(&step);
        out.push(y);
        if y == TokenId::EOS {
            break;
        }
        state = step.state;
    }
    Ok(out)
}

/// Teacher-forced decoder steps for a known target.
pub fn teacher_forced_steps(params: &ModelParams, input_ids: &[TokenId], target: &[TokenId]) -> Result<Vec<DecoderStep>> {
    let trace = encode(params, input_ids)?;
    let mut state = DecoderState::initial(&trace);
    let mut y = TokenId::SOS;
    let mut steps = Vec::with_capacity(target.len());
    for &t in target {
        let step = decode_step(params, y, &state, &trace);
        state = step.state.clone();
        y = t;
        steps.push(step);
    }
    Ok(steps)
}

/// Token-level argmax accuracy under teacher forcing, and intent accuracy.
pub fn teacher_forced_accuracy(params: &ModelParams, pairs: &[TrainingPair], intent_mode: IntentMode) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((0.0, 0.0));
    }
    let cfg = LossConfig {
        intent: true,
        entity: false,
        intent_mode,
        fine_tune_embeddings: false,
        teacher_forcing: true,
    };
    let entities = EntityIndex::from_ids(params.vocab_size, std::iter::empty());
    let mut tokens = 0;
    let mut correct = 0;
    let mut intents = 0;
    for chunk in pairs.chunks(256) {
        let s = batch_stats(params, chunk, &entities, &cfg)?;
        tokens += s.tokens;
        correct += s.correct_tokens;
        intents += s.intent_correct;
    }
    Ok((correct as f64 / tokens as f64, intents as f64 / pairs.len() as f64))
}
