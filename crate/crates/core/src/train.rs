//! Preference training, supervised warm-up and oracle win rates.
//!
//! Each example of a batch is recorded on its own tape, possibly in
//! parallel; gradients are summed in example order so runs are bit-for-bit
//! reproducible regardless of thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::array::RealArray;
use crate::autodiff::Tape;
use crate::checkpoint::{config_hash, Checkpoint};
use crate::data::{CorpusEntry, PreferencePair, RewardOracle};
use crate::error::{Error, Result};
use crate::losses::{kto_z_ref, record_pair_loss, LossConfig, LossMethod, PairScore, PairVars};
use crate::model::{LanguageModel, PolicyModel, TokenSequence, Vocabulary};
use crate::seed;

/// Linear warm-up over the first `ceil(warmup_fraction * total_steps)` steps,
/// then half a cosine down to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, warmup_fraction: f64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let step = step.min(total_steps);
    let warmup = (warmup_fraction * total_steps as f64 - 1e-9).ceil().max(0.0) as usize;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let span = total_steps - warmup;
    if span == 0 {
        return base_lr;
    }
    let progress = (step - warmup) as f64 / span as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &[RealArray], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [RealArray], grads: &[RealArray], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.values_mut().iter_mut().zip(g.values()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub epochs: usize,
    /// Exact number of optimizer steps; epochs repeat as needed. Overrides `epochs`.
    pub steps: Option<usize>,
    pub seed: u64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; none by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            learning_rate: 5e-4,
            batch_size: 32,
            warmup_fraction: 0.1,
            epochs: 1,
            steps: None,
            seed: 0,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid(format!("warmup fraction must lie in [0, 1), got {}", self.warmup_fraction)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("grad clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_string(self).expect("config serializes"))
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub margin: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
    /// Pairs dropped because they do not fit the context.
    pub skipped: usize,
}

pub fn metrics_to_jsonl(metrics: &[StepMetrics]) -> String {
    metrics
        .iter()
        .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
        .collect()
}

/// A pair in token form, with its frozen reference log-probs.
struct Example {
    id: u64,
    chosen: TokenSequence,
    rejected: TokenSequence,
    chosen_ref: Option<Vec<f64>>,
    rejected_ref: Option<Vec<f64>>,
}

/// Per-token log-probs of both responses under `model`, as a [`PairScore`]
/// (policy side only).
pub fn score_pair<M: LanguageModel + ?Sized>(model: &M, pair: &PreferencePair) -> Result<PairScore> {
    let c = pair.chosen_sequence();
    let r = pair.rejected_sequence();
    Ok(PairScore::new(
        crate::model::token_logprobs(model, &c)?,
        crate::model::token_logprobs(model, &r)?,
        c.prompt_len(),
    ))
}

/// Policy and reference scores for every pair, in order.
pub fn score_pairs<P, R>(policy: &P, reference: Option<&R>, pairs: &[PreferencePair]) -> Result<Vec<PairScore>>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    pairs
        .par_iter()
        .map(|p| {
            let s = score_pair(policy, p)?;
            match reference {
                Some(r) => {
                    let rs = score_pair(r, p)?;
                    Ok(s.with_reference(rs.chosen_logps, rs.rejected_logps))
                }
                None => Ok(s),
            }
        })
        .collect()
}

fn prepare(pairs: &[PreferencePair], model: &PolicyModel, reference: Option<&PolicyModel>) -> Result<(Vec<Example>, usize)> {
    let context = model.config().context;
    let mut kept = Vec::new();
    let mut skipped = 0;
    for (i, p) in pairs.iter().enumerate() {
        let (c, r) = (p.chosen_sequence(), p.rejected_sequence());
        let fits = c.validate(context, Vocabulary::SIZE).is_ok() && r.validate(context, Vocabulary::SIZE).is_ok();
        if fits {
            kept.push((i as u64, c, r));
        } else {
            log::warn!("skipping pair {:?}: it does not fit the {context}-token context", p.id);
            skipped += 1;
        }
    }
    let examples = kept
        .into_par_iter()
        .map(|(id, chosen, rejected)| {
            let (chosen_ref, rejected_ref) = match reference {
                Some(m) => (Some(m.token_logprobs(&chosen)?), Some(m.token_logprobs(&rejected)?)),
                None => (None, None),
            };
            Ok(Example {
                id,
                chosen,
                rejected,
                chosen_ref,
                rejected_ref,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((examples, skipped))
}

struct ExampleGrad {
    loss: f64,
    margin: f64,
    grads: Vec<RealArray>,
}

fn example_grad(model: &PolicyModel, ex: &Example, cfg: &LossConfig, z_ref: f64) -> Result<ExampleGrad> {
    let mut tape = Tape::new();
    let leaves = model.param_leaves(&mut tape);
    let chosen = model.record_token_logprobs(&mut tape, &leaves, &ex.chosen)?;
    let rejected = model.record_token_logprobs(&mut tape, &leaves, &ex.rejected)?;
    let vars = PairVars {
        chosen,
        rejected,
        chosen_ref: ex.chosen_ref.as_deref(),
        rejected_ref: ex.rejected_ref.as_deref(),
        prompt_len: ex.chosen.prompt_len(),
    };
    let rec = record_pair_loss(&mut tape, &vars, cfg, ex.id, z_ref)?;
    let grads = tape.gradients(rec.loss)?;
    Ok(ExampleGrad {
        loss: tape.scalar(rec.loss),
        margin: rec.margin,
        grads: model.param_grads(&grads, &leaves),
    })
}

/// Batch-mean loss, margin and gradient at the current parameters.
fn batch_gradient(
    model: &PolicyModel,
    batch: &[&Example],
    cfg: &LossConfig,
) -> Result<(f64, f64, Vec<RealArray>)> {
    let z_ref = if cfg.method == LossMethod::Kto {
        let rejected = batch
            .par_iter()
            .map(|ex| model.token_logprobs(&ex.rejected))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = batch.iter().map(|ex| ex.rejected_ref.as_deref().unwrap_or(&[])).collect();
        kto_z_ref(rejected.iter().map(Vec::as_slice).zip(refs), cfg.beta)
    } else {
        0.0
    };
    let per = batch
        .par_iter()
        .map(|ex| example_grad(model, ex, cfg, z_ref))
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let mut grads: Vec<RealArray> = model.params().iter().map(|p| RealArray::zeros(p.shape().to_vec())).collect();
    let (mut loss, mut margin) = (0.0, 0.0);
    for e in &per {
        loss += e.loss;
        margin += e.margin;
        for (acc, g) in grads.iter_mut().zip(&e.grads) {
            for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        g.values_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, margin / n, grads))
}

fn global_norm(grads: &[RealArray]) -> f64 {
    grads.iter().map(RealArray::sum_squares).sum::<f64>().sqrt()
}

/// Batch order for every epoch: a fresh shuffle per epoch from the run seed.
fn batches(n: usize, batch_size: usize, total_steps: usize, seed_val: u64) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(total_steps);
    let mut epoch = 0u64;
    while out.len() < total_steps {
        let order = crate::data::shuffled(&(0..n).collect::<Vec<_>>(), seed::substream(seed_val, "shuffle", epoch));
        for chunk in order.chunks(batch_size) {
            if out.len() == total_steps {
                break;
            }
            out.push(chunk.to_vec());
        }
        epoch += 1;
    }
    out
}

/// Trains `init` on `pairs`. A reference model must be given exactly when
/// the loss needs one.
pub fn train(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    init: &Checkpoint,
    reference: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    match (cfg.loss.method.needs_reference(), reference.is_some()) {
        (true, false) => return Err(Error::invalid(format!("method {} needs a reference model", cfg.loss.method))),
        (false, true) => return Err(Error::invalid(format!("method {} takes no reference model", cfg.loss.method))),
        _ => {}
    }
    let mut model = init.model.clone();
    let (examples, skipped) = prepare(pairs, &model, reference.map(|r| &r.model))?;
    let total_steps = match cfg.steps {
        Some(s) => s,
        None => cfg.epochs * examples.len().div_ceil(cfg.batch_size),
    };
    if examples.is_empty() && total_steps > 0 {
        return Err(Error::invalid("no trainable pairs"));
    }
    let mut opt = AdamW::new(model.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
    let mut metrics = Vec::with_capacity(total_steps);
    for (step, idx) in batches(examples.len(), cfg.batch_size, total_steps, cfg.seed).into_iter().enumerate() {
        let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let (loss, margin, mut grads) = batch_gradient(&model, &batch, &cfg.loss)?;
        let grad_norm = global_norm(&grads);
        if !(loss.is_finite() && grad_norm.is_finite()) {
            return Err(Error::invalid(format!("non-finite loss or gradient at step {step}")));
        }
        if let Some(clip) = cfg.grad_clip {
            if grad_norm > clip {
                let s = clip / grad_norm;
                grads.iter_mut().for_each(|g| g.values_mut().iter_mut().for_each(|v| *v *= s));
            }
        }
        let lr = cosine_lr(step, total_steps, cfg.warmup_fraction, cfg.learning_rate);
        opt.step(model.params_mut(), &grads, lr);
        log::debug!("step {step}: loss {loss:.6} margin {margin:.6} grad_norm {grad_norm:.6} lr {lr:.3e}");
        metrics.push(StepMetrics {
            step,
            loss,
            margin,
            grad_norm,
            lr,
        });
    }
    model.round_to_f32();
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            config_hash: cfg.hash(),
            step: init.step + total_steps as u64,
            seed: cfg.seed,
        },
        metrics,
        skipped,
    })
}

/// Supervised warm-up on prompt/target pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 16,
            steps: 300,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Mean per-token negative log-likelihood of `target + EOS` given the prompt.
pub fn pretrain_sft(cfg: &SftConfig, corpus: &[CorpusEntry], init: &Checkpoint) -> Result<(Checkpoint, Vec<StepMetrics>)> {
    if corpus.is_empty() && cfg.steps > 0 {
        return Err(Error::invalid("empty corpus"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("SFT needs batch size >= 1 and learning rate > 0"));
    }
    let mut model = init.model.clone();
    let seqs: Vec<TokenSequence> = corpus.iter().map(|e| TokenSequence::from_bytes(&e.prompt, &e.target)).collect();
    for s in &seqs {
        s.validate(model.config().context, Vocabulary::SIZE)?;
    }
    let mut opt = AdamW::new(model.params(), 0.9, 0.999, 1e-8, 0.0);
    let mut metrics = Vec::with_capacity(cfg.steps);
    for (step, idx) in batches(seqs.len(), cfg.batch_size, cfg.steps, cfg.seed).into_iter().enumerate() {
        let per = idx
            .par_iter()
            .map(|&i| {
                let seq = &seqs[i];
                let mut tape = Tape::new();
                let leaves = model.param_leaves(&mut tape);
                let lp = model.record_token_logprobs(&mut tape, &leaves, seq)?;
                let total = tape.sum(lp);
                let nll = tape.scale(total, -1.0 / seq.response_len() as f64);
                let grads = tape.gradients(nll)?;
                Ok((tape.scalar(nll), model.param_grads(&grads, &leaves)))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per.len() as f64;
        let mut grads: Vec<RealArray> = model.params().iter().map(|p| RealArray::zeros(p.shape().to_vec())).collect();
        let mut loss = 0.0;
        for (l, g) in &per {
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(g) {
                for (a, b) in acc.values_mut().iter_mut().zip(gi.values()) {
                    *a += b / n;
                }
            }
        }
        let lr = cosine_lr(step, cfg.steps, cfg.warmup_fraction, cfg.learning_rate);
        let grad_norm = global_norm(&grads);
        opt.step(model.params_mut(), &grads, lr);
        metrics.push(StepMetrics {
            step,
            loss: loss / n,
            margin: 0.0,
            grad_norm,
            lr,
        });
    }
    model.round_to_f32();
    let hash = config_hash(&serde_json::to_string(cfg).expect("config serializes"));
    Ok((
        Checkpoint {
            model,
            config_hash: hash,
            step: init.step + cfg.steps as u64,
            seed: cfg.seed,
        },
        metrics,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WinRate {
    pub win: usize,
    pub tie: usize,
    pub lose: usize,
}

impl WinRate {
    pub fn total(&self) -> usize {
        self.win + self.tie + self.lose
    }

    /// `(win + tie / 2) / total`.
    pub fn rate(&self) -> f64 {
        (self.win as f64 + 0.5 * self.tie as f64) / self.total() as f64
    }
}

/// One sample per model per prompt with a shared seed per prompt; the
/// candidate wins a prompt when its oracle score is strictly higher.
pub fn evaluate_winrate<C: LanguageModel + ?Sized, B: LanguageModel + ?Sized>(
    candidate: &C,
    baseline: &B,
    oracle: &RewardOracle,
    prompts: &[Vec<u8>],
    temperature: f64,
    max_len: usize,
    seed_val: u64,
) -> Result<WinRate> {
    let outcomes = prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let s = seed::substream(seed_val, "eval", i as u64);
            let tokens = Vocabulary::prompt_tokens(prompt);
            let a = crate::model::sample(candidate, &tokens, temperature, max_len, s)?;
            let b = crate::model::sample(baseline, &tokens, temperature, max_len, s)?;
            let sa = oracle.score(prompt, &a.response_bytes())?;
            let sb = oracle.score(prompt, &b.response_bytes())?;
            Ok(sa.partial_cmp(&sb).unwrap_or(std::cmp::Ordering::Equal))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut wr = WinRate { win: 0, tie: 0, lose: 0 };
    for o in outcomes {
        match o {
            std::cmp::Ordering::Greater => wr.win += 1,
            std::cmp::Ordering::Equal => wr.tie += 1,
            std::cmp::Ordering::Less => wr.lose += 1,
        }
    }
    Ok(wr)
}
