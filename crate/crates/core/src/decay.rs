//! Per-position loss coefficients.
//!
//! A [`DecaySchedule`] turns a response length `T` (and the prompt length `l`
//! when counting from the prompt start) into one coefficient per response
//! token. `Exponential` with `gamma = 1` and `Uniform` both give all ones,
//! which recovers the undecayed pairwise objective.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    Uniform,
    /// `gamma^(o + t)`
    Exponential,
    /// Keep the first `ceil(gamma * T)` tokens.
    Head,
    /// `1 - t / (gamma * T)` on the first `ceil(gamma * T)` tokens.
    Linear,
    /// `1 / (o + t + 1)^gamma`
    PowerLaw,
}

/// Where position counting starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayOrigin {
    PromptStart,
    AnswerStart,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DecaySchedule {
    pub kind: DecayKind,
    pub gamma: f64,
    pub origin: DecayOrigin,
}

impl Default for DecaySchedule {
    fn default() -> Self {
        Self {
            kind: DecayKind::Exponential,
            gamma: 0.98,
            origin: DecayOrigin::PromptStart,
        }
    }
}

// Head/Linear cutoffs are products like 0.3 * 10 that land a hair above an
// integer; this slack keeps ceil() from rounding them up.
const CUTOFF_SLACK: f64 = 1e-9;

impl DecaySchedule {
    pub fn uniform() -> Self {
        Self {
            kind: DecayKind::Uniform,
            gamma: 1.0,
            origin: DecayOrigin::AnswerStart,
        }
    }

    pub fn exponential(gamma: f64, origin: DecayOrigin) -> Self {
        Self {
            kind: DecayKind::Exponential,
            gamma,
            origin,
        }
    }

    pub fn new(kind: DecayKind, gamma: f64, origin: DecayOrigin) -> Self {
        Self {
            kind,
            gamma,
            origin,
        }
    }

    /// Checks the per-kind range of `gamma`.
    pub fn validate(&self) -> Result<()> {
        let g = self.gamma;
        if !g.is_finite() {
            return Err(Error::invalid(format!("decay gamma must be finite, got {g}")));
        }
        let ok = match self.kind {
            DecayKind::Uniform => true,
            DecayKind::Exponential => g > 0.0,
            DecayKind::Head | DecayKind::Linear => g > 0.0 && g <= 1.0,
            DecayKind::PowerLaw => g >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "gamma {g} is outside the valid range for {} decay",
                self.kind
            )))
        }
    }

    /// Non-fatal concerns about the schedule, such as an exponential gamma above one.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == DecayKind::Exponential && self.gamma > 1.0 {
            out.push(format!(
                "exponential decay with gamma {} > 1 up-weights late tokens and has been observed to hurt",
                self.gamma
            ));
        }
        out
    }

    /// Number of leading tokens kept by Head/Linear for a length-`t` response.
    fn cutoff(&self, response_len: usize) -> usize {
        let c = (self.gamma * response_len as f64 - CUTOFF_SLACK).ceil();
        (c.max(0.0) as usize).min(response_len)
    }

    /// One coefficient per response position.
    pub fn weights(&self, response_len: usize, prompt_len: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if response_len == 0 {
            return Err(Error::invalid("response length must be at least 1"));
        }
        let offset = match self.origin {
            DecayOrigin::PromptStart => prompt_len,
            DecayOrigin::AnswerStart => 0,
        };
        let g = self.gamma;
        let w = match self.kind {
            DecayKind::Uniform => vec![1.0; response_len],
            DecayKind::Exponential => {
                let base = g.powi(offset as i32);
                (0..response_len).map(|t| base * g.powi(t as i32)).collect()
            }
            DecayKind::Head => {
                let cut = self.cutoff(response_len);
                (0..response_len).map(|t| if t < cut { 1.0 } else { 0.0 }).collect()
            }
            DecayKind::Linear => {
                let cut = self.cutoff(response_len);
                let span = g * response_len as f64;
                (0..response_len)
                    .map(|t| if t < cut { 1.0 - t as f64 / span } else { 0.0 })
                    .collect()
            }
            DecayKind::PowerLaw => (0..response_len)
                .map(|t| 1.0 / ((offset + t + 1) as f64).powf(g))
                .collect(),
        };
        Ok(w)
    }
}

/// Free-function form of [`DecaySchedule::weights`].
pub fn weights(schedule: &DecaySchedule, response_len: usize, prompt_len: usize) -> Result<Vec<f64>> {
    schedule.weights(response_len, prompt_len)
}

impl serde::Serialize for DecayKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl fmt::Display for DecayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayKind::Uniform => "uniform",
            DecayKind::Exponential => "exponential",
            DecayKind::Head => "head",
            DecayKind::Linear => "linear",
            DecayKind::PowerLaw => "power-law",
        })
    }
}

impl FromStr for DecayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(DecayKind::Uniform),
            "exponential" | "exp" => Ok(DecayKind::Exponential),
            "head" => Ok(DecayKind::Head),
            "linear" => Ok(DecayKind::Linear),
            "power-law" | "powerlaw" | "power_law" => Ok(DecayKind::PowerLaw),
            other => Err(Error::invalid(format!("unknown decay kind {other:?}"))),
        }
    }
}

impl serde::Serialize for DecayOrigin {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl fmt::Display for DecayOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayOrigin::PromptStart => "prompt",
            DecayOrigin::AnswerStart => "answer",
        })
    }
}

impl FromStr for DecayOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prompt" | "prompt-start" | "promptstart" => Ok(DecayOrigin::PromptStart),
            "answer" | "answer-start" | "answerstart" => Ok(DecayOrigin::AnswerStart),
            other => Err(Error::invalid(format!("unknown decay origin {other:?}"))),
        }
    }
}
