//! Byte-level autoregressive policy.
//!
//! [`PolicyModel`] is a small causal transformer (single-head attention plus
//! ReLU feed-forward, residual connections, no normalization) over a 258-token
//! vocabulary: the 256 byte values plus BOS and EOS. The output projection
//! starts at zero, so a fresh model predicts the uniform distribution.
//!
//! Scoring and sampling are written against the [`LanguageModel`] trait so
//! they can be checked on hand-built models such as [`BigramModel`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::RealArray;
use crate::autodiff::{sequence_logprobs_from_logits, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::seed;

pub const VOCAB_SIZE: usize = 258;
pub const BOS: usize = 256;
pub const EOS: usize = 257;

/// Byte vocabulary with BOS/EOS specials.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vocabulary;

impl Vocabulary {
    pub const SIZE: usize = VOCAB_SIZE;
    pub const BOS: usize = BOS;
    pub const EOS: usize = EOS;

    pub fn encode(bytes: &[u8]) -> Vec<usize> {
        bytes.iter().map(|&b| b as usize).collect()
    }

    /// Inverse of [`encode`](Self::encode); special tokens are dropped.
    pub fn decode(tokens: &[usize]) -> Vec<u8> {
        tokens.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect()
    }

    /// `BOS` followed by the prompt bytes.
    pub fn prompt_tokens(prompt: &[u8]) -> Vec<usize> {
        let mut t = Vec::with_capacity(prompt.len() + 1);
        t.push(BOS);
        t.extend(Self::encode(prompt));
        t
    }

    /// Response bytes followed by `EOS`.
    pub fn response_tokens(response: &[u8]) -> Vec<usize> {
        let mut t = Self::encode(response);
        t.push(EOS);
        t
    }
}

/// A prompt and a response, both as token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
}

impl TokenSequence {
    pub fn new(prompt: Vec<usize>, response: Vec<usize>) -> Self {
        Self { prompt, response }
    }

    /// Encodes a byte prompt and response with BOS/EOS.
    pub fn from_bytes(prompt: &[u8], response: &[u8]) -> Self {
        Self {
            prompt: Vocabulary::prompt_tokens(prompt),
            response: Vocabulary::response_tokens(response),
        }
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt.len()
    }

    pub fn response_len(&self) -> usize {
        self.response.len()
    }

    pub fn response_bytes(&self) -> Vec<u8> {
        Vocabulary::decode(&self.response)
    }

    /// Model input: the prompt and all response tokens except the last.
    pub fn inputs(&self) -> Vec<usize> {
        let mut t = self.prompt.clone();
        t.extend_from_slice(&self.response[..self.response.len().saturating_sub(1)]);
        t
    }

    pub fn validate(&self, context_len: usize, vocab: usize) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::invalid("prompt must hold at least BOS"));
        }
        if self.response.is_empty() {
            return Err(Error::invalid("response must hold at least one token"));
        }
        if self.prompt.len() + self.response.len() > context_len {
            return Err(Error::invalid(format!(
                "sequence of {} tokens exceeds context {context_len}",
                self.prompt.len() + self.response.len()
            )));
        }
        if let Some(t) = self.prompt.iter().chain(&self.response).find(|&&t| t >= vocab) {
            return Err(Error::invalid(format!("token {t} outside vocabulary {vocab}")));
        }
        Ok(())
    }
}

/// Anything that maps a token prefix to next-token logits.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    fn context_len(&self) -> usize;

    /// Next-token logits after each prefix `tokens[..=i]` for `i` in
    /// `start..tokens.len()`, one row per prefix.
    fn logits_rows(&self, tokens: &[usize], start: usize) -> Result<RealArray>;
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Probability distribution over the next token given `context`.
pub fn next_token_distribution<M: LanguageModel + ?Sized>(model: &M, context: &[usize]) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(Error::invalid("context must not be empty"));
    }
    if context.len() > model.context_len() {
        return Err(Error::invalid(format!(
            "context of {} tokens exceeds {}",
            context.len(),
            model.context_len()
        )));
    }
    let logits = model.logits_rows(context, context.len() - 1)?;
    Ok(softmax(logits.row(0)))
}

/// Next-token distributions after every response prefix: row `t` conditions
/// on the prompt and `response[..t]`.
pub fn response_distributions<M: LanguageModel + ?Sized>(model: &M, seq: &TokenSequence) -> Result<Vec<Vec<f64>>> {
    seq.validate(model.context_len(), model.vocab_size())?;
    let logits = model.logits_rows(&seq.inputs(), seq.prompt_len() - 1)?;
    Ok((0..logits.rows()).map(|t| softmax(logits.row(t))).collect())
}

/// `log P(response[t] | prompt, response[..t])` for every response position.
pub fn token_logprobs<M: LanguageModel + ?Sized>(model: &M, seq: &TokenSequence) -> Result<Vec<f64>> {
    seq.validate(model.context_len(), model.vocab_size())?;
    let logits = model.logits_rows(&seq.inputs(), seq.prompt_len() - 1)?;
    Ok(sequence_logprobs_from_logits(&logits, &seq.response)?.into_values())
}

/// Draws a response. Temperature 0 is greedy decoding with ties going to the
/// lowest token id. Generation stops after EOS, after `max_len` tokens, or
/// when the context is full.
pub fn sample<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &[usize],
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<TokenSequence> {
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be >= 0, got {temperature}")));
    }
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    if prompt.is_empty() || prompt.len() >= model.context_len() {
        return Err(Error::invalid(format!(
            "prompt of {} tokens leaves no room in context {}",
            prompt.len(),
            model.context_len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut tokens = prompt.to_vec();
    let limit = max_len.min(model.context_len() - prompt.len());
    let mut response = Vec::new();
    while response.len() < limit {
        let logits = model.logits_rows(&tokens, tokens.len() - 1)?;
        let row = logits.row(0);
        let next = if temperature == 0.0 {
            argmax_lowest(row)
        } else {
            let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
            draw(&softmax(&scaled), rng.random::<f64>())
        };
        response.push(next);
        tokens.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(TokenSequence::new(prompt.to_vec(), response))
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub context: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            context: 256,
            blocks: 2,
            mlp_hidden: 128,
            init_seed: 0,
        }
    }
}

/// Names the architecture in checkpoint manifests.
pub const ARCHITECTURE: &str = "causal-transformer/single-head-attention+relu-mlp/no-norm/zero-init-head";

/// Small causal transformer over the byte vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<RealArray>,
}

fn round_f32(a: &mut RealArray) {
    for v in a.values_mut() {
        *v = *v as f32 as f64;
    }
}

impl PolicyModel {
    /// Random initialization; values are rounded to `f32` so checkpoints
    /// reproduce them exactly.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.d_model == 0 || config.context < 2 || config.blocks == 0 || config.mlp_hidden == 0 {
            return Err(Error::invalid(format!("degenerate model config {config:?}")));
        }
        let mut rng = seed::substream_rng(config.init_seed, "init", 0);
        let (d, c, h, v) = (config.d_model, config.context, config.mlp_hidden, VOCAB_SIZE);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, std: f64| {
            let vals = if std == 0.0 {
                vec![0.0; rows * cols]
            } else {
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..rows * cols).map(|_| normal.sample(&mut rng)).collect()
            };
            let mut a = RealArray::matrix(rows, cols, vals).expect("sized");
            round_f32(&mut a);
            names.push(name);
            params.push(a);
        };
        let inv = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        add("tok_emb".into(), v, d, 0.5);
        add("pos_emb".into(), c, d, 0.1);
        for b in 0..config.blocks {
            add(format!("block{b}.attn_q"), d, d, inv(d));
            add(format!("block{b}.attn_k"), d, d, inv(d));
            add(format!("block{b}.attn_v"), d, d, inv(d));
            add(format!("block{b}.attn_o"), d, d, 0.5 * inv(d));
            add(format!("block{b}.mlp_in"), d, h, inv(d));
            add(format!("block{b}.mlp_out"), h, d, 0.5 * inv(h));
        }
        add("head".into(), d, v, 0.0);
        Ok(Self { config, names, params })
    }

    /// Rebuilds a model from named arrays in manifest order.
    pub fn from_parts(config: ModelConfig, names: Vec<String>, params: Vec<RealArray>) -> Result<Self> {
        let template = Self::new(config)?;
        if names != template.names {
            return Err(Error::Checkpoint(format!(
                "parameter names {names:?} do not match architecture {:?}",
                template.names
            )));
        }
        for ((n, p), t) in names.iter().zip(&params).zip(&template.params) {
            if p.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {n} has shape {:?}, expected {:?}",
                    p.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[RealArray] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [RealArray] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(RealArray::len).sum()
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        self.params.iter_mut().for_each(round_f32);
    }

    /// Records every parameter as a leaf, in manifest order.
    pub fn param_leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Gradients for each parameter leaf, in manifest order.
    pub fn param_grads(&self, grads: &Gradients, leaves: &[Var]) -> Vec<RealArray> {
        leaves.iter().map(|&v| grads.wrt(v)).collect()
    }

    /// Records the forward pass over `tokens`, returning logits for rows
    /// `start..tokens.len()`.
    pub fn record_logits(&self, tape: &mut Tape, params: &[Var], tokens: &[usize], start: usize) -> Result<Var> {
        let n = tokens.len();
        if n == 0 || n > self.config.context {
            return Err(Error::invalid(format!(
                "input of {n} tokens outside context 1..={}",
                self.config.context
            )));
        }
        if start >= n {
            return Err(Error::invalid(format!("start row {start} beyond {n} inputs")));
        }
        let scale = 1.0 / (self.config.d_model as f64).sqrt();
        let positions: Vec<usize> = (0..n).collect();
        let tok = tape.gather_rows(params[0], tokens)?;
        let pos = tape.gather_rows(params[1], &positions)?;
        let mut x = tape.add(tok, pos);
        for b in 0..self.config.blocks {
            let w = &params[2 + 6 * b..2 + 6 * (b + 1)];
            let q = tape.matmul(x, w[0]);
            let k = tape.matmul(x, w[1]);
            let v = tape.matmul(x, w[2]);
            let scores = tape.matmul_t(q, k);
            let scores = tape.scale(scores, scale);
            let attn = tape.causal_softmax(scores);
            let mixed = tape.matmul(attn, v);
            let out = tape.matmul(mixed, w[3]);
            x = tape.add(x, out);
            let hidden = tape.matmul(x, w[4]);
            let hidden = tape.relu(hidden);
            let ff = tape.matmul(hidden, w[5]);
            x = tape.add(x, ff);
        }
        let x = if start > 0 { tape.slice_rows(x, start, n) } else { x };
        let head = *params.last().expect("head parameter");
        Ok(tape.matmul(x, head))
    }

    /// Records per-token response log-probs of `seq`.
    pub fn record_token_logprobs(&self, tape: &mut Tape, params: &[Var], seq: &TokenSequence) -> Result<Var> {
        seq.validate(self.config.context, VOCAB_SIZE)?;
        let logits = self.record_logits(tape, params, &seq.inputs(), seq.prompt_len() - 1)?;
        tape.log_prob_gather(logits, &seq.response)
    }

    pub fn next_token_distribution(&self, context: &[usize]) -> Result<Vec<f64>> {
        next_token_distribution(self, context)
    }

    pub fn token_logprobs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        token_logprobs(self, seq)
    }

    pub fn sample(&self, prompt: &[usize], temperature: f64, max_len: usize, seed: u64) -> Result<TokenSequence> {
        sample(self, prompt, temperature, max_len, seed)
    }
}

impl LanguageModel for PolicyModel {
    fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    fn context_len(&self) -> usize {
        self.config.context
    }

    fn logits_rows(&self, tokens: &[usize], start: usize) -> Result<RealArray> {
        if let Some(t) = tokens.iter().find(|&&t| t >= VOCAB_SIZE) {
            return Err(Error::invalid(format!("token {t} outside vocabulary")));
        }
        let mut tape = Tape::new();
        let leaves = self.param_leaves(&mut tape);
        let out = self.record_logits(&mut tape, &leaves, tokens, start)?;
        Ok(tape.value(out).clone())
    }
}

/// First-order Markov model with an explicit logit table: the next-token
/// logits depend only on the last token of the context.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    logits: Vec<Vec<f64>>,
    context: usize,
}

impl BigramModel {
    /// `logits[a][b]` is the logit of `b` following `a`.
    pub fn new(logits: Vec<Vec<f64>>, context: usize) -> Result<Self> {
        let v = logits.len();
        if v == 0 || logits.iter().any(|r| r.len() != v) {
            return Err(Error::invalid("bigram table must be square and nonempty"));
        }
        Ok(Self { logits, context })
    }

    /// Table from transition probabilities (rows must be strictly positive).
    pub fn from_probs(probs: Vec<Vec<f64>>, context: usize) -> Result<Self> {
        Self::new(
            probs.into_iter().map(|r| r.into_iter().map(f64::ln).collect()).collect(),
            context,
        )
    }
}

impl LanguageModel for BigramModel {
    fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    fn context_len(&self) -> usize {
        self.context
    }

    fn logits_rows(&self, tokens: &[usize], start: usize) -> Result<RealArray> {
        let v = self.vocab_size();
        if tokens.len() > self.context || start >= tokens.len() {
            return Err(Error::invalid("bad bigram query"));
        }
        let mut out = Vec::with_capacity((tokens.len() - start) * v);
        for &t in &tokens[start..] {
            let row = self
                .logits
                .get(t)
                .ok_or_else(|| Error::invalid(format!("token {t} outside vocabulary {v}")))?;
            out.extend_from_slice(row);
        }
        RealArray::matrix(tokens.len() - start, v, out)
    }
}
