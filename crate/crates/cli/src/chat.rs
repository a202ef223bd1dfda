//! Line-oriented chat against a trained checkpoint.
//!
//! The context fed to the encoder is every driver utterance and every
//! generated response so far, concatenated. Commands start with `/`.

use std::io::{BufRead, Write};

use anyhow::{bail, Context};
use kgdial::kvl::decode_with_kvl;
use kgdial::metrics::response_tokens;
use kgdial::neural::tensor::softmax;
use kgdial::neural::{encode, generate, predict_intent_with, IntentMode};
use kgdial::{Dialogue, EntityRegistry, IntentSet, KnowledgeGraph, ModelParams, TokenId, Tokenizer, Vocabulary};

use crate::artifacts::{Artifacts, Split};
use crate::config::{PipelineConfig, Variant};
use crate::pipeline::load_model;

const HELP: &str = "commands: /scenario [split] <k>, /kb, /intent, /reset, /help, /quit";

pub struct ChatSession {
    params: ModelParams,
    vocab: Vocabulary,
    tokenizer: Tokenizer,
    intents: IntentSet,
    intent_mode: IntentMode,
    use_kvl: bool,
    max_len: usize,
    scenarios: Vec<(Split, Vec<Dialogue>)>,
    local: Option<(String, KnowledgeGraph, EntityRegistry)>,
    context: Vec<TokenId>,
}

/// What the session produced for one driver utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub response: Vec<String>,
    pub intent: String,
    pub intent_probability: f64,
    /// `(model's choice, emitted entity)` for every KVL substitution.
    pub replacements: Vec<(String, String)>,
    pub unknown_words: Vec<String>,
}

impl ChatSession {
    pub fn load(cfg: &PipelineConfig, variant: Variant) -> anyhow::Result<Self> {
        let art = Artifacts::new(&cfg.artifacts);
        let vocab = art.load_vocab()?;
        let kg = art.load_kg()?;
        let params = load_model(&art, variant, &vocab)?;
        let mut scenarios = Vec::new();
        for split in Split::ALL {
            if let Some(d) = art.load_dialogues(split)? {
                scenarios.push((split, d));
            }
        }
        let mut session = ChatSession {
            params,
            tokenizer: Tokenizer::new(kg.entities().iter().cloned()),
            vocab,
            intents: IntentSet::in_car(),
            intent_mode: cfg.model.intent_mode,
            use_kvl: cfg.kvl,
            max_len: cfg.max_response_len,
            scenarios,
            local: None,
            context: Vec::new(),
        };
        if session.scenarios.iter().any(|(_, d)| !d.is_empty()) {
            let split = session.scenarios.iter().find(|(_, d)| !d.is_empty()).map(|(s, _)| *s);
            session.select_scenario(split.unwrap(), 0)?;
        }
        Ok(session)
    }

    pub fn scenario(&self) -> Option<&str> {
        self.local.as_ref().map(|(name, _, _)| name.as_str())
    }

    /// Uses dialogue `k` of `split` as the local KG and clears the context.
    pub fn select_scenario(&mut self, split: Split, k: usize) -> anyhow::Result<()> {
        let dialogues = self
            .scenarios
            .iter()
            .find(|(s, _)| *s == split)
            .map(|(_, d)| d)
            .with_context(|| format!("no {} split in the artifacts", split.name()))?;
        let d = dialogues
            .get(k)
            .with_context(|| format!("{} split has {} dialogues; no scenario {k}", split.name(), dialogues.len()))?;
        let registry = EntityRegistry::new(&self.vocab, &d.local_kg);
        self.local = Some((format!("{} {k}", split.name()), d.local_kg.clone(), registry));
        self.context.clear();
        Ok(())
    }

    pub fn reset(&mut self) {
        self.context.clear();
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    /// Intent distribution for the current context.
    pub fn intent_distribution(&self) -> anyhow::Result<Vec<(String, f64)>> {
        if self.context.is_empty() {
            bail!("no context yet");
        }
        let trace = encode(&self.params, &self.context)?;
        let probs = softmax(&predict_intent_with(&self.params, &trace, self.intent_mode));
        Ok(self.intents.names().iter().cloned().zip(probs).collect())
    }

    /// Appends the utterance to the context, generates a response and
    /// appends that too.
    pub fn respond(&mut self, utterance: &str) -> anyhow::Result<Reply> {
        let tokens = self.tokenizer.tokenize(utterance);
        if tokens.is_empty() {
            bail!("empty utterance");
        }
        let unknown_words: Vec<String> = tokens.iter().filter(|t| self.vocab.id(t).is_none()).cloned().collect();
        self.context.extend(self.vocab.encode(&tokens));

        let (ids, replacements) = match (&self.local, self.use_kvl) {
            (Some((_, _, registry)), true) => {
                let (ids, decisions) = decode_with_kvl(&self.params, &self.context, registry, self.max_len)?;
                let swaps = decisions
                    .iter()
                    .filter(|d| d.replaced)
                    .map(|d| {
                        (
                            self.vocab.token(d.original_id).to_string(),
                            self.vocab.token(d.emitted_id).to_string(),
                        )
                    })
                    .collect();
                (ids, swaps)
            }
            _ => (generate(&self.params, &self.context, self.max_len)?, Vec::new()),
        };
        let response = response_tokens(&self.vocab, &ids);
        let dist = self.intent_distribution()?;
        let (intent, intent_probability) = dist
            .iter()
            .fold(None::<&(String, f64)>, |best, x| match best {
                Some(b) if b.1 >= x.1 => Some(b),
                _ => Some(x),
            })
            .cloned()
            .expect("intent set is non-empty");
        let end = ids.iter().position(|&t| t == TokenId::EOS).unwrap_or(ids.len());
        self.context.extend_from_slice(&ids[..end]);
        Ok(Reply {
            response,
            intent,
            intent_probability,
            replacements,
            unknown_words,
        })
    }

    fn print_kb<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        match &self.local {
            Some((name, kg, _)) => {
                writeln!(out, "scenario {name}: {} triples", kg.len())?;
                kg.write_tsv(&mut *out)
            }
            None => writeln!(out, "no scenario selected"),
        }
    }

    /// Runs the read-respond loop until `/quit` or end of input.
    pub fn run<R: BufRead, W: Write>(&mut self, input: R, mut out: W) -> anyhow::Result<()> {
        writeln!(out, "{HELP}")?;
        if let Some(name) = self.scenario() {
            writeln!(out, "scenario: {name}")?;
        }
        write!(out, "> ")?;
        out.flush()?;
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                write!(out, "> ")?;
                out.flush()?;
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("/quit") | Some("/exit") => break,
                Some("/help") => writeln!(out, "{HELP}")?,
                Some("/reset") => {
                    self.reset();
                    writeln!(out, "context cleared")?;
                }
                Some("/kb") => self.print_kb(&mut out)?,
                Some("/intent") => match self.intent_distribution() {
                    Ok(dist) => {
                        for (name, p) in dist {
                            writeln!(out, "{name}\t{p:.4}")?;
                        }
                    }
                    Err(e) => writeln!(out, "{e}")?,
                },
                Some("/scenario") => {
                    let args: Vec<&str> = words.collect();
                    let parsed = match args.as_slice() {
                        [k] => k.parse().ok().map(|k| (Split::Train, k)),
                        [s, k] => Split::parse(s).zip(k.parse().ok()),
                        _ => None,
                    };
                    match parsed {
                        Some((split, k)) => match self.select_scenario(split, k) {
                            Ok(()) => writeln!(out, "scenario: {}", self.scenario().unwrap_or("-"))?,
                            Err(e) => writeln!(out, "{e}")?,
                        },
                        None => writeln!(out, "usage: /scenario [train|dev|test] <k>")?,
                    }
                }
                Some(cmd) if cmd.starts_with('/') => writeln!(out, "unknown command {cmd}; {HELP}")?,
                _ => match self.respond(line) {
                    Ok(reply) => {
                        if !reply.unknown_words.is_empty() {
                            writeln!(out, "note: unknown words replaced by <unk>: {}", reply.unknown_words.join(" "))?;
                        }
                        writeln!(out, "assistant: {}", reply.response.join(" "))?;
                        writeln!(out, "intent: {} ({:.4})", reply.intent, reply.intent_probability)?;
                        for (from, to) in &reply.replacements {
                            writeln!(out, "kvl: {from} -> {to}")?;
                        }
                    }
                    Err(e) => writeln!(out, "{e}")?,
                },
            }
            write!(out, "> ")?;
            out.flush()?;
        }
        writeln!(out)?;
        Ok(())
    }
}
