//! Diagnostics over trained models and preference data, each producing a
//! small table that can be written as CSV.
//!
//! Positions count response tokens from 0. Per-position values average over
//! the samples long enough to reach that position.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::PreferencePair;
use crate::error::{Error, Result};
use crate::losses::{pair_losses, LossConfig, PairScore};
use crate::model::{response_distributions, token_logprobs, LanguageModel, TokenSequence};

/// `(position, value)` rows with strictly increasing positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionCurve {
    pub rows: Vec<(usize, f64)>,
}

impl PositionCurve {
    pub fn positions(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.1).collect()
    }

    pub fn to_csv(&self, comments: &[&str]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("position,value\n");
        for (p, v) in &self.rows {
            let _ = writeln!(out, "{p},{v}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_csv(text, "position,value")?
            .into_iter()
            .map(|(line, a, b)| {
                let p = a.parse::<usize>().map_err(|e| csv_error(line, e))?;
                let v = b.parse::<f64>().map_err(|e| csv_error(line, e))?;
                Ok((p, v))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("curve positions must strictly increase"));
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistogram {
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    pub bin_width: f64,
}

impl DensityHistogram {
    /// `sum density * bin_width`.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }

    pub fn to_csv(&self, comments: &[&str]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "# bin_width={}", self.bin_width);
        out.push_str("value,density\n");
        for (c, d) in self.centers.iter().zip(&self.density) {
            let _ = writeln!(out, "{c},{d}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bin_width = text
            .lines()
            .find_map(|l| l.strip_prefix("# bin_width="))
            .ok_or_else(|| Error::invalid("histogram CSV lacks a bin_width comment"))?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::invalid(format!("bad bin_width: {e}")))?;
        let mut centers = Vec::new();
        let mut density = Vec::new();
        for (line, a, b) in parse_csv(text, "value,density")? {
            centers.push(a.parse::<f64>().map_err(|e| csv_error(line, e))?);
            density.push(b.parse::<f64>().map_err(|e| csv_error(line, e))?);
        }
        Ok(Self {
            centers,
            density,
            bin_width,
        })
    }
}

fn csv_error(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_csv<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, &'a str, &'a str)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((i, h)) => return Err(csv_error(i, format!("expected header {header:?}, found {h:?}"))),
        None => return Err(csv_error(0, format!("missing header {header:?}"))),
    }
    lines
        .map(|(i, l)| match l.split_once(',') {
            Some((a, b)) if !b.contains(',') => Ok((i, a, b)),
            _ => Err(csv_error(i, format!("expected two fields, found {l:?}"))),
        })
        .collect()
}

/// Averages per-sample position series over the samples that reach each
/// position, summing in sample order.
fn survivor_mean(series: &[Vec<f64>], max_pos: usize) -> PositionCurve {
    let mut sums = vec![0.0; max_pos];
    let mut counts = vec![0usize; max_pos];
    for s in series {
        for (p, v) in s.iter().take(max_pos).enumerate() {
            sums[p] += v;
            counts[p] += 1;
        }
    }
    let rows = (0..max_pos)
        .filter(|&p| counts[p] > 0)
        .map(|p| (p, sums[p] / counts[p] as f64))
        .collect();
    PositionCurve { rows }
}

/// Number of samples reaching each position `0..max_pos`.
pub fn survivor_counts(samples: &[TokenSequence], max_pos: usize) -> Vec<usize> {
    (0..max_pos)
        .map(|p| samples.iter().filter(|s| s.response_len() > p).count())
        .collect()
}

/// `KL(p || q)` in nats; terms with `p = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Mean `KL(policy || reference)` of the next-token distributions at each
/// response position.
pub fn kl_per_position<P: LanguageModel + ?Sized, R: LanguageModel + ?Sized>(
    policy: &P,
    reference: &R,
    samples: &[TokenSequence],
    max_pos: usize,
) -> Result<PositionCurve> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to analyse"));
    }
    if policy.vocab_size() != reference.vocab_size() || policy.context_len() != reference.context_len() {
        return Err(Error::invalid("policy and reference differ in vocabulary or context"));
    }
    let series = samples
        .par_iter()
        .map(|seq| {
            let p = response_distributions(policy, seq)?;
            let q = response_distributions(reference, seq)?;
            Ok(p.iter().zip(&q).take(max_pos).map(|(a, b)| kl_divergence(a, b)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(survivor_mean(&series, max_pos))
}

/// Mean probability of the realised token at each response position.
pub fn prob_per_position<M: LanguageModel + ?Sized>(
    model: &M,
    samples: &[TokenSequence],
    max_pos: usize,
) -> Result<PositionCurve> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to analyse"));
    }
    let series = samples
        .par_iter()
        .map(|seq| Ok(token_logprobs(model, seq)?.into_iter().take(max_pos).map(f64::exp).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(survivor_mean(&series, max_pos))
}

/// Sequence log-prob of chosen minus rejected under `model`, per pair.
pub fn sequence_margins<M: LanguageModel + ?Sized>(model: &M, pairs: &[PreferencePair]) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| {
            let c: f64 = token_logprobs(model, &p.chosen_sequence())?.iter().sum();
            let r: f64 = token_logprobs(model, &p.rejected_sequence())?.iter().sum();
            Ok(c - r)
        })
        .collect()
}

/// Equal-width histogram over `[min, max]` of `values`, normalised to unit
/// area. A zero range gets a window of width 1 centred on the value.
pub fn density_histogram(values: &[f64], bins: usize) -> Result<DensityHistogram> {
    if values.is_empty() {
        return Err(Error::invalid("no values to histogram"));
    }
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite value {v}")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = values.len() as f64;
    Ok(DensityHistogram {
        centers: (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect(),
        density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
        bin_width: width,
    })
}

/// Density of the reference margin over `pairs`.
pub fn ref_margin_density<M: LanguageModel + ?Sized>(
    reference: &M,
    pairs: &[PreferencePair],
    bins: usize,
) -> Result<DensityHistogram> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to analyse"));
    }
    density_histogram(&sequence_margins(reference, pairs)?, bins)
}

/// One row of [`loss_by_length_gap`]. `lo..hi` is half-open; the overflow
/// row has neither bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GapBin {
    pub lo: Option<i64>,
    pub hi: Option<i64>,
    pub mean_loss: f64,
    pub count: usize,
}

impl GapBin {
    pub fn label(&self) -> String {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => format!("[{lo};{hi})"),
            _ => "overflow".to_owned(),
        }
    }

    pub fn contains(&self, gap: i64) -> bool {
        matches!((self.lo, self.hi), (Some(lo), Some(hi)) if lo <= gap && gap < hi)
    }
}

/// Mean loss per bin of `T_w - T_l`, with `boundaries` `b_0 < ... < b_k`
/// giving bins `[b_i, b_{i+1})`. Gaps outside every bin land in a trailing
/// overflow row. Losses are computed in batch context over all `scores`, so
/// a single bin covering every gap reproduces the batch loss. Empty bins
/// report a mean of zero.
pub fn loss_by_length_gap(cfg: &LossConfig, scores: &[PairScore], boundaries: &[i64]) -> Result<Vec<GapBin>> {
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("gap boundaries must be at least two strictly increasing values"));
    }
    let losses = pair_losses(scores, cfg)?;
    let mut bins: Vec<GapBin> = boundaries
        .windows(2)
        .map(|w| GapBin {
            lo: Some(w[0]),
            hi: Some(w[1]),
            mean_loss: 0.0,
            count: 0,
        })
        .chain(std::iter::once(GapBin {
            lo: None,
            hi: None,
            mean_loss: 0.0,
            count: 0,
        }))
        .collect();
    let overflow = bins.len() - 1;
    for (s, loss) in scores.iter().zip(&losses) {
        let gap = s.length_gap();
        let i = bins[..overflow].iter().position(|b| b.contains(gap)).unwrap_or(overflow);
        bins[i].mean_loss += loss;
        bins[i].count += 1;
    }
    for b in &mut bins {
        if b.count > 0 {
            b.mean_loss /= b.count as f64;
        }
    }
    Ok(bins)
}

pub fn gap_table_to_csv(rows: &[GapBin], comments: &[&str]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("bin,lo,hi,mean_loss,count\n");
    for r in rows {
        let bound = |b: Option<i64>| b.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "{},{},{},{},{}", r.label(), bound(r.lo), bound(r.hi), r.mean_loss, r.count);
    }
    out
}

/// Count-weighted mean loss over pairs with positive and with negative gap.
pub fn signed_gap_means(cfg: &LossConfig, scores: &[PairScore]) -> Result<(f64, f64)> {
    let losses = pair_losses(scores, cfg)?;
    let mean_where = |keep: fn(i64) -> bool| {
        let picked: Vec<f64> = scores
            .iter()
            .zip(&losses)
            .filter(|(s, _)| keep(s.length_gap()))
            .map(|(_, l)| *l)
            .collect();
        if picked.is_empty() {
            f64::NAN
        } else {
            picked.iter().sum::<f64>() / picked.len() as f64
        }
    };
    Ok((mean_where(|g| g > 0), mean_where(|g| g < 0)))
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant or fewer than two points are given.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() != ys.len() || xs.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
