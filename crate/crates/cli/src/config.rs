//! Run configuration: per-command key schemas, the config file format and
//! the precedence `defaults < file < DECAYPO_SEED < flags`.
//!
//! Config files are TOML with a `[global]` table and one table per command
//! (`[train]`, `[build-pairs]`, ...). Keys use underscores; the matching
//! flag replaces them with dashes (`learning_rate` is `--learning-rate`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const SEED_ENV: &str = "DECAYPO_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Text,
    Path,
    /// Comma-separated numbers.
    List,
}

impl Kind {
    fn label(self) -> &'static str {
        match self {
            Kind::Int => "INT",
            Kind::Float => "FLOAT",
            Kind::Text => "TEXT",
            Kind::Path => "PATH",
            Kind::List => "LIST",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    /// `None` marks a key that is unset unless given.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, kind, default, help }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub const GLOBAL: &[Key] = &[key("seed", Kind::Int, Some("0"), "root seed for every random substream")];

const LOSS: &[Key] = &[
    key("method", Kind::Text, Some("d2po"), "d2po, d2po-ref-free, simpo, ipo, kto, orpo or sampo"),
    key("beta", Kind::Float, Some("0.1"), "inverse temperature of the implicit reward"),
    key("schedule", Kind::Text, Some("exponential"), "uniform, exponential, head, linear or power-law"),
    key("gamma", Kind::Float, Some("0.98"), "decay rate of the schedule"),
    key("origin", Kind::Text, Some("prompt"), "where decay starts counting: prompt or answer"),
    key("tau", Kind::Float, Some("0.1"), "IPO regularisation"),
    key("lambda_w", Kind::Float, Some("1.0"), "KTO weight of desirable responses"),
    key("lambda_l", Kind::Float, Some("1.0"), "KTO weight of undesirable responses"),
    key("lambda_orpo", Kind::Float, Some("1.0"), "ORPO odds-ratio weight"),
    key("target_margin", Kind::Float, Some("0.5"), "SimPO target reward margin"),
    key("sampo_seed", Kind::Int, None, "SamPO subsampling seed (default: derived from seed)"),
];

const PRETRAIN: &[Key] = &[
    key("out", Kind::Path, None, "output directory"),
    key("corpus", Kind::Path, None, "corpus JSONL (default: generate the synthetic task)"),
    key("prompts", Kind::Int, Some("200"), "synthetic prompts to generate"),
    key("alphabet", Kind::Int, Some("6"), "letters available to synthetic units"),
    key("max_unit_len", Kind::Int, Some("3"), "longest synthetic unit"),
    key("max_count", Kind::Int, Some("5"), "largest synthetic repeat count"),
    key("d_model", Kind::Int, Some("64"), "model width"),
    key("context", Kind::Int, Some("256"), "context length in tokens"),
    key("blocks", Kind::Int, Some("2"), "transformer blocks"),
    key("mlp_hidden", Kind::Int, Some("128"), "MLP hidden width"),
    key("steps", Kind::Int, Some("300"), "optimizer steps"),
    key("learning_rate", Kind::Float, Some("0.003"), "peak learning rate"),
    key("batch_size", Kind::Int, Some("16"), "examples per step"),
    key("warmup_fraction", Kind::Float, Some("0.1"), "share of steps spent warming up"),
];

const BUILD_PAIRS: &[Key] = &[
    key("out", Kind::Path, None, "output directory"),
    key("source", Kind::Text, Some("onpolicy"), "onpolicy or length-mixed"),
    key("corpus", Kind::Path, None, "corpus JSONL with prompts and targets"),
    key("model", Kind::Path, None, "checkpoint to sample from (onpolicy)"),
    key("samples_per_prompt", Kind::Int, Some("5"), "samples drawn per prompt"),
    key("temperature", Kind::Float, Some("0.8"), "sampling temperature"),
    key("max_len", Kind::Int, Some("32"), "longest sampled response in tokens"),
    key("oracle", Kind::Text, Some("target-match"), "target-match or length-penalized"),
    key("brevity_coefficient", Kind::Float, Some("0.0"), "per-byte penalty of length-penalized"),
];

const TRAIN: &[Key] = &[
    key("out", Kind::Path, None, "output directory"),
    key("pairs", Kind::Path, None, "preference pairs JSONL"),
    key("init", Kind::Path, None, "starting checkpoint"),
    key("reference", Kind::Path, None, "frozen reference checkpoint (reference-based methods)"),
    key("learning_rate", Kind::Float, Some("0.0005"), "peak learning rate"),
    key("batch_size", Kind::Int, Some("32"), "pairs per step"),
    key("warmup_fraction", Kind::Float, Some("0.1"), "share of steps spent warming up"),
    key("epochs", Kind::Int, Some("1"), "passes over the pairs"),
    key("steps", Kind::Int, None, "step count overriding epochs"),
    key("weight_decay", Kind::Float, Some("0.0"), "decoupled weight decay"),
    key("adam_beta1", Kind::Float, Some("0.9"), "first-moment decay"),
    key("adam_beta2", Kind::Float, Some("0.999"), "second-moment decay"),
    key("adam_eps", Kind::Float, Some("1e-8"), "AdamW epsilon"),
    key("grad_clip", Kind::Float, None, "global gradient-norm clip"),
];

const SAMPLE: &[Key] = &[
    key("out", Kind::Path, None, "output directory"),
    key("model", Kind::Path, None, "checkpoint to sample from"),
    key("corpus", Kind::Path, None, "corpus JSONL supplying prompts"),
    key("samples_per_prompt", Kind::Int, Some("1"), "samples drawn per prompt"),
    key("temperature", Kind::Float, Some("0.8"), "sampling temperature"),
    key("max_len", Kind::Int, Some("32"), "longest sampled response in tokens"),
];

const EVAL: &[Key] = &[
    key("out", Kind::Path, None, "output directory"),
    key("candidate", Kind::Path, None, "checkpoint under test"),
    key("baseline", Kind::Path, None, "checkpoint compared against"),
    key("corpus", Kind::Path, None, "corpus JSONL supplying prompts and targets"),
    key("oracle", Kind::Text, Some("target-match"), "target-match or length-penalized"),
    key("brevity_coefficient", Kind::Float, Some("0.0"), "per-byte penalty of length-penalized"),
    key("temperature", Kind::Float, Some("0.8"), "sampling temperature"),
    key("max_len", Kind::Int, Some("32"), "longest sampled response in tokens"),
];

const ANALYZE: &[Key] = &[
    key("out", Kind::Path, None, "output directory"),
    key("policy", Kind::Path, None, "trained checkpoint (kl-position, length-bias)"),
    key("reference", Kind::Path, None, "reference checkpoint (kl-position, ref-margin, length-bias)"),
    key("model", Kind::Path, None, "checkpoint to inspect (prob-position)"),
    key("samples", Kind::Path, None, "samples JSONL from the sample command"),
    key("pairs", Kind::Path, None, "preference pairs JSONL (ref-margin, length-bias)"),
    key("max_pos", Kind::Int, Some("64"), "last response position analysed"),
    key("min_survivors", Kind::Int, Some("30"), "samples a position needs to enter the rank correlation"),
    key("bins", Kind::Int, Some("30"), "histogram bins"),
    key("gap_bins", Kind::List, Some("-16,-8,-4,-2,-1,0,1,2,4,8,17"), "length-gap bin boundaries"),
];

const MDP_VERIFY: &[Key] = &[
    key("out", Kind::Path, None, "output directory"),
    key("seeds", Kind::Int, Some("100"), "random instances"),
    key("gammas", Kind::List, Some("0.3,0.5,0.7,0.9,0.95,0.98"), "training discounts"),
    key("max_states", Kind::Int, Some("5"), "largest state count"),
    key("max_actions", Kind::Int, Some("5"), "largest action count"),
    key("max_horizon", Kind::Int, Some("10"), "longest horizon"),
    key("reward_bound", Kind::Float, Some("1.0"), "rewards lie in [-R, R]"),
    key("beta", Kind::Float, Some("0.1"), "KL regularisation of the soft optimum"),
];

/// A config section: its table name and keys.
#[derive(Debug, Clone, Copy)]
pub struct Section {
    pub name: &'static str,
    pub parts: &'static [&'static [Key]],
}

impl Section {
    pub fn keys(&self) -> impl Iterator<Item = &'static Key> + '_ {
        self.parts.iter().flat_map(|p| p.iter())
    }

    fn find(&self, name: &str) -> Option<&'static Key> {
        self.keys().find(|k| k.name == name)
    }
}

pub const SECTIONS: &[Section] = &[
    Section { name: "pretrain", parts: &[PRETRAIN] },
    Section { name: "build-pairs", parts: &[BUILD_PAIRS] },
    Section { name: "train", parts: &[TRAIN, LOSS] },
    Section { name: "sample", parts: &[SAMPLE] },
    Section { name: "eval", parts: &[EVAL] },
    Section { name: "analyze", parts: &[ANALYZE, LOSS] },
    Section { name: "mdp-verify", parts: &[MDP_VERIFY] },
];

pub const GLOBAL_SECTION: Section = Section { name: "global", parts: &[GLOBAL] };

pub fn section(name: &str) -> &'static Section {
    SECTIONS.iter().find(|s| s.name == name).expect("known section")
}

/// Resolved values of one run, as text; typed on access.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub section: &'static Section,
    values: BTreeMap<&'static str, String>,
}

fn toml_to_text(v: &toml::Value) -> Option<String> {
    Some(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items.iter().map(toml_to_text).collect::<Option<Vec<_>>>()?.join(","),
        _ => return None,
    })
}

fn file_values(path: &Path, sec: &'static Section) -> Result<Vec<(&'static str, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("config {} is not valid: {e}", path.display())))?;
    let mut out = Vec::new();
    for (name, value) in &table {
        let Some(inner) = value.as_table() else {
            return Err(CliError::Usage(format!(
                "config key {name:?} must sit inside a section such as [global] or [{}]",
                sec.name
            )));
        };
        let target = if name == "global" {
            &GLOBAL_SECTION
        } else {
            SECTIONS
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| CliError::Usage(format!("unknown config section [{name}]")))?
        };
        for (k, v) in inner {
            let spec = target
                .find(k)
                .ok_or_else(|| CliError::Usage(format!("unknown config key {name}.{k}")))?;
            let text = toml_to_text(v)
                .ok_or_else(|| CliError::Usage(format!("config key {name}.{k} has an unsupported value")))?;
            // other commands' sections are checked but not applied
            if target.name == "global" || target.name == sec.name {
                out.push((spec.name, text));
            }
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Applies defaults, then the config file, then the seed variable, then
    /// flags. `flags` holds `(key, value)` for every flag given.
    pub fn resolve(
        sec: &'static Section,
        file: Option<&Path>,
        env_seed: Option<String>,
        flags: Vec<(&'static str, String)>,
    ) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for k in GLOBAL_SECTION.keys().chain(sec.keys()) {
            if let Some(d) = k.default {
                values.insert(k.name, d.to_owned());
            }
        }
        if let Some(path) = file {
            values.extend(file_values(path, sec)?);
        }
        if let Some(s) = env_seed {
            s.parse::<u64>()
                .map_err(|e| CliError::Usage(format!("{SEED_ENV}={s:?} is not a seed: {e}")))?;
            values.insert("seed", s);
        }
        values.extend(flags);
        let cfg = Self { section: sec, values };
        for k in GLOBAL_SECTION.keys().chain(sec.keys()) {
            if let Some(v) = cfg.values.get(k.name) {
                cfg.check(k, v)?;
            }
        }
        Ok(cfg)
    }

    fn check(&self, k: &Key, v: &str) -> Result<(), CliError> {
        let bad = |e: String| CliError::Usage(format!("invalid value {v:?} for {} (--{}): {e}", k.name, flag_name(k.name)));
        match k.kind {
            Kind::Int => v.parse::<u64>().map(drop).map_err(|e| bad(e.to_string())),
            Kind::Float => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(()),
                Ok(_) => Err(bad("must be finite".into())),
                Err(e) => Err(bad(e.to_string())),
            },
            Kind::List => parse_list(v).map(drop).map_err(bad),
            Kind::Text | Kind::Path if v.is_empty() => Err(bad("must not be empty".into())),
            Kind::Text | Kind::Path => Ok(()),
        }
    }

    pub fn is_set(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn text(&self, name: &str) -> Result<&str, CliError> {
        self.values.get(name).map(String::as_str).ok_or_else(|| {
            CliError::Usage(format!("missing required key {name} (--{})", flag_name(name)))
        })
    }

    pub fn opt_text(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, name: &str) -> Result<T, CliError> {
        let v = self.text(name)?;
        v.parse::<T>()
            .map_err(|_| CliError::Usage(format!("invalid value {v:?} for {name} (--{})", flag_name(name))))
    }

    pub fn u64(&self, name: &str) -> Result<u64, CliError> {
        self.parsed(name)
    }

    pub fn usize(&self, name: &str) -> Result<usize, CliError> {
        self.parsed(name)
    }

    pub fn opt_usize(&self, name: &str) -> Result<Option<usize>, CliError> {
        self.values.get(name).map(|_| self.usize(name)).transpose()
    }

    pub fn opt_u64(&self, name: &str) -> Result<Option<u64>, CliError> {
        self.values.get(name).map(|_| self.u64(name)).transpose()
    }

    pub fn f64(&self, name: &str) -> Result<f64, CliError> {
        self.parsed(name)
    }

    pub fn opt_f64(&self, name: &str) -> Result<Option<f64>, CliError> {
        self.values.get(name).map(|_| self.f64(name)).transpose()
    }

    pub fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        self.text(name).map(PathBuf::from)
    }

    pub fn opt_path(&self, name: &str) -> Option<PathBuf> {
        self.opt_text(name).map(PathBuf::from)
    }

    pub fn list(&self, name: &str) -> Result<Vec<f64>, CliError> {
        parse_list(self.text(name)?).map_err(|e| CliError::Usage(format!("invalid list for {name}: {e}")))
    }

    /// Parses a value with `FromStr`, reporting failures against the key.
    pub fn choice<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.text(name)?;
        v.parse::<T>()
            .map_err(|e| CliError::Usage(format!("invalid value {v:?} for {name} (--{}): {e}", flag_name(name))))
    }

    /// The resolved configuration as a config file that reproduces the run.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for sec in [&GLOBAL_SECTION, self.section] {
            let _ = writeln!(out, "[{}]", sec.name);
            for k in sec.keys() {
                if let Some(v) = self.values.get(k.name) {
                    let _ = writeln!(out, "{} = {}", k.name, render(k.kind, v));
                }
            }
            out.push('\n');
        }
        out.pop();
        out
    }
}

/// TOML text for a checked value. Numbers are re-printed from their parsed
/// form, which round-trips exactly and is always valid TOML.
fn render(kind: Kind, v: &str) -> String {
    match kind {
        Kind::Int => v.parse::<u64>().map_or_else(|_| v.to_owned(), |x| x.to_string()),
        Kind::Float => v.parse::<f64>().map_or_else(|_| v.to_owned(), |x| x.to_string()),
        Kind::List => {
            let items = parse_list(v).unwrap_or_default();
            format!("[{}]", items.iter().map(f64::to_string).collect::<Vec<_>>().join(", "))
        }
        Kind::Text | Kind::Path => toml::Value::String(v.to_owned()).to_string(),
    }
}

pub fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    let items: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if items.iter().any(|x| !x.is_finite()) {
        return Err("entries must be finite".into());
    }
    Ok(items)
}

pub fn value_name(k: &Key) -> &'static str {
    k.kind.label()
}
