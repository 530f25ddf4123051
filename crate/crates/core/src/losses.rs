//! Pairwise preference objectives.
//!
//! Every loss is recorded on a [`Tape`] from per-token policy log-probability
//! vectors, so the value used for reporting and the gradient used for training
//! come from the same arithmetic. The `*_loss` functions are the plain-number
//! front ends over [`PairScore`] records.
//!
//! The decayed margin is
//!
//! ```text
//! m = sum_t w_t * beta * (log pi(y_w^t) - log ref(y_w^t))
//!   - sum_t w_t * beta * (log pi(y_l^t) - log ref(y_l^t))
//! loss = -log sigmoid(m)
//! ```
//!
//! with `w` from a [`DecaySchedule`]; the uniform schedule is plain DPO.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;

use crate::array::RealArray;
use crate::autodiff::{logsigmoid_unchecked, Tape, Var};
use crate::decay::DecaySchedule;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMethod {
    /// Decayed DPO; plain DPO under the uniform schedule.
    D2po,
    D2poRefFree,
    SimPo,
    Ipo,
    Kto,
    Orpo,
    SamPo,
}

impl LossMethod {
    pub fn needs_reference(self) -> bool {
        matches!(self, Self::D2po | Self::Ipo | Self::Kto | Self::SamPo)
    }
}

impl serde::Serialize for LossMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl fmt::Display for LossMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::D2po => "d2po",
            Self::D2poRefFree => "d2po-ref-free",
            Self::SimPo => "simpo",
            Self::Ipo => "ipo",
            Self::Kto => "kto",
            Self::Orpo => "orpo",
            Self::SamPo => "sampo",
        })
    }
}

impl FromStr for LossMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "d2po" | "dpo" => Ok(Self::D2po),
            "d2po-ref-free" | "d2po-reffree" | "ref-free" => Ok(Self::D2poRefFree),
            "simpo" => Ok(Self::SimPo),
            "ipo" => Ok(Self::Ipo),
            "kto" => Ok(Self::Kto),
            "orpo" => Ok(Self::Orpo),
            "sampo" => Ok(Self::SamPo),
            other => Err(Error::invalid(format!("unknown loss method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossConfig {
    pub method: LossMethod,
    pub beta: f64,
    pub schedule: DecaySchedule,
    /// IPO target is `1 / (2 tau)`.
    pub tau: f64,
    pub lambda_w: f64,
    pub lambda_l: f64,
    /// Weight of the ORPO odds-ratio penalty.
    pub lambda_orpo: f64,
    /// SimPO reward margin.
    pub target_margin: f64,
    pub sampo_seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            method: LossMethod::D2po,
            beta: 0.1,
            schedule: DecaySchedule::default(),
            tau: 0.1,
            lambda_w: 1.0,
            lambda_l: 1.0,
            lambda_orpo: 1.0,
            target_margin: 0.5,
            sampo_seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.method == LossMethod::Ipo && !(self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if matches!(self.method, LossMethod::D2po | LossMethod::D2poRefFree) {
            self.schedule.validate()?;
        }
        Ok(())
    }
}

/// Per-token scores for one preference pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub chosen_logps: Vec<f64>,
    pub rejected_logps: Vec<f64>,
    pub chosen_ref_logps: Option<Vec<f64>>,
    pub rejected_ref_logps: Option<Vec<f64>>,
    pub prompt_len: usize,
}

impl PairScore {
    pub fn new(chosen_logps: Vec<f64>, rejected_logps: Vec<f64>, prompt_len: usize) -> Self {
        Self {
            chosen_logps,
            rejected_logps,
            chosen_ref_logps: None,
            rejected_ref_logps: None,
            prompt_len,
        }
    }

    pub fn with_reference(mut self, chosen_ref: Vec<f64>, rejected_ref: Vec<f64>) -> Self {
        self.chosen_ref_logps = Some(chosen_ref);
        self.rejected_ref_logps = Some(rejected_ref);
        self
    }

    pub fn chosen_len(&self) -> usize {
        self.chosen_logps.len()
    }

    pub fn rejected_len(&self) -> usize {
        self.rejected_logps.len()
    }

    /// `T_w - T_l`.
    pub fn length_gap(&self) -> i64 {
        self.chosen_len() as i64 - self.rejected_len() as i64
    }

    /// Chosen and rejected swapped, reference included.
    pub fn swapped(&self) -> Self {
        Self {
            chosen_logps: self.rejected_logps.clone(),
            rejected_logps: self.chosen_logps.clone(),
            chosen_ref_logps: self.rejected_ref_logps.clone(),
            rejected_ref_logps: self.chosen_ref_logps.clone(),
            prompt_len: self.prompt_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return Err(Error::invalid(format!("{name} is empty")));
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite() || **x > 0.0) {
                return Err(Error::invalid(format!("{name} has entry {x}; log-probs must be finite and <= 0")));
            }
            Ok(())
        };
        check("chosen_logps", &self.chosen_logps)?;
        check("rejected_logps", &self.rejected_logps)?;
        match (&self.chosen_ref_logps, &self.rejected_ref_logps) {
            (Some(c), Some(r)) => {
                check("chosen_ref_logps", c)?;
                check("rejected_ref_logps", r)?;
                if c.len() != self.chosen_len() || r.len() != self.rejected_len() {
                    return Err(Error::invalid("reference log-prob lengths differ from policy lengths"));
                }
            }
            (None, None) => {}
            _ => return Err(Error::invalid("reference log-probs must be given for both responses")),
        }
        Ok(())
    }

    fn references(&self) -> Result<(&[f64], &[f64])> {
        match (&self.chosen_ref_logps, &self.rejected_ref_logps) {
            (Some(c), Some(r)) => Ok((c, r)),
            _ => Err(Error::invalid("this loss needs reference log-probs")),
        }
    }
}

/// Policy log-prob vars for one pair plus the constant data a loss needs.
#[derive(Debug, Clone, Copy)]
pub struct PairVars<'a> {
    pub chosen: Var,
    pub rejected: Var,
    pub chosen_ref: Option<&'a [f64]>,
    pub rejected_ref: Option<&'a [f64]>,
    pub prompt_len: usize,
}

/// A recorded loss together with its preference margin.
///
/// The margin is the argument of the sigmoid (or of the square, for IPO).
/// For KTO it is `beta * (ratio_w - ratio_l)`.
#[derive(Debug, Clone, Copy)]
pub struct RecordedLoss {
    pub loss: Var,
    pub margin: f64,
}

fn require_refs<'a>(p: &PairVars<'a>) -> Result<(&'a [f64], &'a [f64])> {
    match (p.chosen_ref, p.rejected_ref) {
        (Some(c), Some(r)) => Ok((c, r)),
        _ => Err(Error::invalid(
            "reference log-probs are required for this loss (missing reference)",
        )),
    }
}

/// Policy log-probs minus constant reference log-probs.
fn log_ratio(tape: &mut Tape, logps: Var, reference: &[f64]) -> Var {
    assert_eq!(tape.value(logps).len(), reference.len(), "reference length mismatch");
    let neg_ref = tape.leaf(RealArray::vector(reference.iter().map(|x| -x).collect()));
    tape.add(logps, neg_ref)
}

fn neg_logsigmoid(tape: &mut Tape, margin: Var) -> RecordedLoss {
    let m = tape.scalar(margin);
    let ls = tape.logsigmoid(margin);
    RecordedLoss {
        loss: tape.scale(ls, -1.0),
        margin: m,
    }
}

/// `-log sigmoid(sum beta*w_c*c - sum beta*w_r*r)`.
fn weighted_contrast(
    tape: &mut Tape,
    chosen: Var,
    rejected: Var,
    chosen_w: &[f64],
    rejected_w: &[f64],
) -> RecordedLoss {
    let c = tape.weighted_sum(chosen, chosen_w);
    let r = tape.weighted_sum(rejected, rejected_w);
    let m = tape.sub(c, r);
    neg_logsigmoid(tape, m)
}

fn decayed_coefficients(cfg: &LossConfig, len: usize, prompt_len: usize) -> Result<Vec<f64>> {
    Ok(cfg
        .schedule
        .weights(len, prompt_len)?
        .into_iter()
        .map(|w| cfg.beta * w)
        .collect())
}

fn len_of(tape: &Tape, v: Var) -> usize {
    tape.value(v).len()
}

pub fn record_d2po(tape: &mut Tape, p: &PairVars, cfg: &LossConfig) -> Result<RecordedLoss> {
    let (cref, rref) = require_refs(p)?;
    let c = log_ratio(tape, p.chosen, cref);
    let r = log_ratio(tape, p.rejected, rref);
    let wc = decayed_coefficients(cfg, len_of(tape, c), p.prompt_len)?;
    let wr = decayed_coefficients(cfg, len_of(tape, r), p.prompt_len)?;
    Ok(weighted_contrast(tape, c, r, &wc, &wr))
}

pub fn record_d2po_ref_free(tape: &mut Tape, p: &PairVars, cfg: &LossConfig) -> Result<RecordedLoss> {
    let wc = decayed_coefficients(cfg, len_of(tape, p.chosen), p.prompt_len)?;
    let wr = decayed_coefficients(cfg, len_of(tape, p.rejected), p.prompt_len)?;
    Ok(weighted_contrast(tape, p.chosen, p.rejected, &wc, &wr))
}

pub fn record_simpo(tape: &mut Tape, p: &PairVars, cfg: &LossConfig) -> Result<RecordedLoss> {
    let (tw, tl) = (len_of(tape, p.chosen), len_of(tape, p.rejected));
    let c = tape.weighted_sum(p.chosen, &vec![cfg.beta / tw as f64; tw]);
    let r = tape.weighted_sum(p.rejected, &vec![cfg.beta / tl as f64; tl]);
    let diff = tape.sub(c, r);
    let m = tape.offset(diff, -cfg.target_margin);
    Ok(neg_logsigmoid(tape, m))
}

pub fn record_ipo(tape: &mut Tape, p: &PairVars, cfg: &LossConfig) -> Result<RecordedLoss> {
    if !(cfg.tau > 0.0) {
        return Err(Error::invalid(format!("tau must be > 0, got {}", cfg.tau)));
    }
    let (cref, rref) = require_refs(p)?;
    let c = log_ratio(tape, p.chosen, cref);
    let r = log_ratio(tape, p.rejected, rref);
    let cs = tape.sum(c);
    let rs = tape.sum(r);
    let h = tape.sub(cs, rs);
    let margin = tape.scalar(h);
    let centered = tape.offset(h, -1.0 / (2.0 * cfg.tau));
    Ok(RecordedLoss {
        loss: tape.square(centered),
        margin,
    })
}

/// One pair's KTO term with `z_ref` held constant:
/// `-lambda_w * sigmoid(beta*ratio_w - z) + lambda_l * sigmoid(beta*ratio_l - z)`.
///
/// The undesirable term is `lambda_l * (1 - sigmoid(z - beta*ratio_l))` with the
/// constant dropped, so pushing the rejected ratio down lowers the loss.
pub fn record_kto(tape: &mut Tape, p: &PairVars, cfg: &LossConfig, z_ref: f64) -> Result<RecordedLoss> {
    let (cref, rref) = require_refs(p)?;
    let z = z_ref.max(0.0);
    let c = log_ratio(tape, p.chosen, cref);
    let r = log_ratio(tape, p.rejected, rref);
    let rw = tape.sum(c);
    let rl = tape.sum(r);
    let margin = cfg.beta * (tape.scalar(rw) - tape.scalar(rl));

    let arg_w = tape.scale(rw, cfg.beta);
    let arg_w = tape.offset(arg_w, -z);
    let sw = tape.sigmoid(arg_w);
    let term_w = tape.scale(sw, -cfg.lambda_w);

    let arg_l = tape.scale(rl, cfg.beta);
    let arg_l = tape.offset(arg_l, -z);
    let sl = tape.sigmoid(arg_l);
    let term_l = tape.scale(sl, cfg.lambda_l);

    Ok(RecordedLoss {
        loss: tape.add(term_w, term_l),
        margin,
    })
}

/// Log-odds of `p = exp(mean)`: `mean - log(1 - exp(mean))`.
fn record_log_odds(tape: &mut Tape, mean: Var) -> Result<Var> {
    let m = tape.scalar(mean);
    if m >= 0.0 {
        return Err(Error::SingularOdds(m));
    }
    let l1m = tape.log1mexp(mean);
    Ok(tape.sub(mean, l1m))
}

pub fn record_orpo(tape: &mut Tape, p: &PairVars, cfg: &LossConfig) -> Result<RecordedLoss> {
    let (tw, tl) = (len_of(tape, p.chosen), len_of(tape, p.rejected));
    let mean_w = tape.weighted_sum(p.chosen, &vec![1.0 / tw as f64; tw]);
    let mean_l = tape.weighted_sum(p.rejected, &vec![1.0 / tl as f64; tl]);
    let odds_w = record_log_odds(tape, mean_w)?;
    let odds_l = record_log_odds(tape, mean_l)?;
    let gap = tape.sub(odds_w, odds_l);
    let penalty = neg_logsigmoid(tape, gap);
    let nll = tape.scale(mean_w, -1.0);
    let weighted = tape.scale(penalty.loss, cfg.lambda_orpo);
    Ok(RecordedLoss {
        loss: tape.add(nll, weighted),
        margin: penalty.margin,
    })
}

/// Index sets used by SamPO: all tokens of the shorter side and `min(T_w, T_l)`
/// sorted indices drawn without replacement from the longer side.
pub fn sampo_indices(chosen_len: usize, rejected_len: usize, sampo_seed: u64, example_id: u64) -> (Vec<usize>, Vec<usize>) {
    let tm = chosen_len.min(rejected_len);
    let mut rng = seed::substream_rng(sampo_seed, "sampo", example_id);
    let mut pick = |len: usize| -> Vec<usize> {
        if len == tm {
            (0..len).collect()
        } else {
            let mut idx = sample(&mut rng, len, tm).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let c = pick(chosen_len);
    let r = pick(rejected_len);
    (c, r)
}

fn mask(len: usize, idx: &[usize], value: f64) -> Vec<f64> {
    let mut w = vec![0.0; len];
    for &i in idx {
        w[i] = value;
    }
    w
}

pub fn record_sampo(tape: &mut Tape, p: &PairVars, cfg: &LossConfig, example_id: u64) -> Result<RecordedLoss> {
    let (cref, rref) = require_refs(p)?;
    let c = log_ratio(tape, p.chosen, cref);
    let r = log_ratio(tape, p.rejected, rref);
    let (tw, tl) = (len_of(tape, c), len_of(tape, r));
    let (ic, ir) = sampo_indices(tw, tl, cfg.sampo_seed, example_id);
    let wc = mask(tw, &ic, cfg.beta);
    let wr = mask(tl, &ir, cfg.beta);
    Ok(weighted_contrast(tape, c, r, &wc, &wr))
}

/// Records the configured loss for one pair. `z_ref` is only read by KTO and
/// `example_id` only by SamPO.
pub fn record_pair_loss(
    tape: &mut Tape,
    p: &PairVars,
    cfg: &LossConfig,
    example_id: u64,
    z_ref: f64,
) -> Result<RecordedLoss> {
    match cfg.method {
        LossMethod::D2po => record_d2po(tape, p, cfg),
        LossMethod::D2poRefFree => record_d2po_ref_free(tape, p, cfg),
        LossMethod::SimPo => record_simpo(tape, p, cfg),
        LossMethod::Ipo => record_ipo(tape, p, cfg),
        LossMethod::Kto => record_kto(tape, p, cfg, z_ref),
        LossMethod::Orpo => record_orpo(tape, p, cfg),
        LossMethod::SamPo => record_sampo(tape, p, cfg, example_id),
    }
}

/// KTO reference point: batch mean of `beta * ratio / T` over rejected
/// responses, clamped at zero.
pub fn kto_z_ref<'a>(
    rejected: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
    beta: f64,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (logps, refs) in rejected {
        let ratio: f64 = logps.iter().zip(refs).map(|(a, b)| a - b).sum();
        total += beta * ratio / logps.len() as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (total / n as f64).max(0.0)
    }
}

/// Leaves for a score's policy log-probs, and the vars view over them.
pub fn score_leaves<'a>(tape: &mut Tape, score: &'a PairScore) -> PairVars<'a> {
    let chosen = tape.leaf(RealArray::vector(score.chosen_logps.clone()));
    let rejected = tape.leaf(RealArray::vector(score.rejected_logps.clone()));
    PairVars {
        chosen,
        rejected,
        chosen_ref: score.chosen_ref_logps.as_deref(),
        rejected_ref: score.rejected_ref_logps.as_deref(),
        prompt_len: score.prompt_len,
    }
}

fn evaluate(score: &PairScore, f: impl FnOnce(&mut Tape, &PairVars) -> Result<RecordedLoss>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = score_leaves(&mut tape, score);
    let rec = f(&mut tape, &vars)?;
    Ok(tape.scalar(rec.loss))
}

pub fn d2po_loss(score: &PairScore, cfg: &LossConfig) -> Result<f64> {
    score.references()?;
    evaluate(score, |t, p| record_d2po(t, p, cfg))
}

pub fn d2po_ref_free_loss(score: &PairScore, cfg: &LossConfig) -> Result<f64> {
    evaluate(score, |t, p| record_d2po_ref_free(t, p, cfg))
}

pub fn simpo_loss(score: &PairScore, cfg: &LossConfig) -> Result<f64> {
    evaluate(score, |t, p| record_simpo(t, p, cfg))
}

pub fn ipo_loss(score: &PairScore, cfg: &LossConfig) -> Result<f64> {
    evaluate(score, |t, p| record_ipo(t, p, cfg))
}

pub fn orpo_loss(score: &PairScore, cfg: &LossConfig) -> Result<f64> {
    evaluate(score, |t, p| record_orpo(t, p, cfg))
}

pub fn sampo_loss(score: &PairScore, cfg: &LossConfig, example_id: u64) -> Result<f64> {
    evaluate(score, |t, p| record_sampo(t, p, cfg, example_id))
}

/// Mean KTO loss over pairs; each pair's chosen response is the desirable
/// example and its rejected response the undesirable one.
pub fn kto_loss(batch: &[PairScore], cfg: &LossConfig, z_ref: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("KTO batch is empty"));
    }
    let mut total = 0.0;
    for score in batch {
        total += evaluate(score, |t, p| record_kto(t, p, cfg, z_ref))?;
    }
    Ok(total / batch.len() as f64)
}

/// Loss for a single pair under `cfg`; KTO uses the pair alone to estimate `z_ref`.
pub fn pair_loss(score: &PairScore, cfg: &LossConfig, example_id: u64) -> Result<f64> {
    match cfg.method {
        LossMethod::Kto => batch_loss(std::slice::from_ref(score), cfg),
        LossMethod::D2po => d2po_loss(score, cfg),
        _ => evaluate(score, |t, p| record_pair_loss(t, p, cfg, example_id, 0.0)),
    }
}

/// Estimates `z_ref` for a batch of scores.
pub fn batch_z_ref(scores: &[PairScore], beta: f64) -> Result<f64> {
    let mut items = Vec::with_capacity(scores.len());
    for s in scores {
        let (_, rref) = s.references()?;
        items.push((s.rejected_logps.as_slice(), rref));
    }
    Ok(kto_z_ref(items, beta))
}

/// Arithmetic mean of per-example losses in index order. SamPO uses the batch
/// index as the example id.
/// Loss of every pair in batch context: KTO shares the batch `z_ref` and
/// SamPO uses the batch index as example id.
pub fn pair_losses(scores: &[PairScore], cfg: &LossConfig) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    cfg.validate()?;
    let z_ref = if cfg.method == LossMethod::Kto {
        batch_z_ref(scores, cfg.beta)?
    } else {
        0.0
    };
    scores
        .iter()
        .enumerate()
        .map(|(i, score)| evaluate(score, |t, p| record_pair_loss(t, p, cfg, i as u64, z_ref)))
        .collect()
}

/// Mean of [`pair_losses`].
pub fn batch_loss(scores: &[PairScore], cfg: &LossConfig) -> Result<f64> {
    let losses = pair_losses(scores, cfg)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// `-log sigmoid(m)` on plain numbers.
pub fn sigmoid_loss(margin: f64) -> f64 {
    -logsigmoid_unchecked(margin)
}

#[cfg(test)]
fn log1mexp_value(x: f64) -> f64 {
    crate::autodiff::log1mexp(x)
}
