//! Preference pairs, their JSONL form, the synthetic task and its reward oracle.
//!
//! Pairs are stored one JSON object per line with keys in the order `id`,
//! `prompt`, `chosen`, `rejected`, `meta`. Text fields hold the bytes as a
//! plain string when they are valid UTF-8; anything else (or anything that
//! would itself start with `b64:`) is written as `"b64:" + base64(bytes)`.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{LanguageModel, TokenSequence, Vocabulary};
use crate::seed;

const B64_PREFIX: &str = "b64:";

pub fn encode_text(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) if !s.starts_with(B64_PREFIX) => s.to_owned(),
        _ => format!("{B64_PREFIX}{}", STANDARD.encode(bytes)),
    }
}

pub fn decode_text(s: &str) -> std::result::Result<Vec<u8>, String> {
    match s.strip_prefix(B64_PREFIX) {
        Some(rest) => STANDARD.decode(rest).map_err(|e| format!("bad base64 payload: {e}")),
        None => Ok(s.as_bytes().to_vec()),
    }
}

/// A prompt with a preferred and a dispreferred response.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub id: String,
    pub prompt: Vec<u8>,
    pub chosen: Vec<u8>,
    pub rejected: Vec<u8>,
    pub meta: Map<String, Value>,
}

impl PreferencePair {
    pub fn new(id: impl Into<String>, prompt: &[u8], chosen: &[u8], rejected: &[u8]) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.to_vec(),
            chosen: chosen.to_vec(),
            rejected: rejected.to_vec(),
            meta: Map::new(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.prompt.is_empty() {
            return Err("prompt is empty".into());
        }
        if self.chosen == self.rejected {
            return Err("chosen and rejected responses are identical".into());
        }
        Ok(())
    }

    /// Token form of the chosen response.
    pub fn chosen_sequence(&self) -> TokenSequence {
        TokenSequence::from_bytes(&self.prompt, &self.chosen)
    }

    pub fn rejected_sequence(&self) -> TokenSequence {
        TokenSequence::from_bytes(&self.prompt, &self.rejected)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    id: String,
    prompt: String,
    chosen: String,
    rejected: String,
    #[serde(default)]
    meta: Map<String, Value>,
}

fn parse_pair_line(line: &str, lineno: usize) -> Result<PreferencePair> {
    let rec: PairRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let field = |s: &str| {
        decode_text(s).map_err(|message| Error::Parse { line: lineno, message })
    };
    let pair = PreferencePair {
        prompt: field(&rec.prompt)?,
        chosen: field(&rec.chosen)?,
        rejected: field(&rec.rejected)?,
        id: rec.id,
        meta: rec.meta,
    };
    pair.validate().map_err(|message| Error::Validation {
        line: lineno,
        id: pair.id.clone(),
        message,
    })?;
    Ok(pair)
}

/// Parses pairs from JSONL text; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<PreferencePair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_pair_line(l, i + 1))
        .collect()
}

pub fn load_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    let bytes = io::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("{} is not UTF-8: {e}", path.display()),
    })?;
    parse_pairs(&text)
}

pub fn pairs_to_jsonl(pairs: &[PreferencePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let rec = PairRecord {
            id: p.id.clone(),
            prompt: encode_text(&p.prompt),
            chosen: encode_text(&p.chosen),
            rejected: encode_text(&p.rejected),
            meta: p.meta.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("pair record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_pairs(pairs: &[PreferencePair], path: &Path) -> Result<()> {
    io::write_atomic(path, pairs_to_jsonl(pairs).as_bytes())
}

/// One prompt of the synthetic task and its reference answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub prompt: Vec<u8>,
    pub target: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    prompt: String,
    target: String,
}

/// Settings for the repetition task: prompts `"{unit}*{count}="` whose answer
/// is `unit` repeated `count` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTask {
    pub prompts: usize,
    /// Units use the first `alphabet` lowercase letters.
    pub alphabet: u8,
    pub max_unit_len: usize,
    pub max_count: usize,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            prompts: 200,
            alphabet: 6,
            max_unit_len: 3,
            max_count: 5,
        }
    }
}

impl SyntheticTask {
    fn combinations(&self) -> usize {
        let a = self.alphabet as usize;
        (1..=self.max_unit_len).map(|l| a.pow(l as u32)).sum::<usize>() * self.max_count
    }

    /// Distinct prompts drawn deterministically from `seed`.
    pub fn generate(&self, seed_val: u64) -> Result<Vec<CorpusEntry>> {
        if self.alphabet == 0 || self.alphabet > 26 || self.max_unit_len == 0 || self.max_count == 0 {
            return Err(Error::invalid(format!("degenerate synthetic task {self:?}")));
        }
        if self.prompts > self.combinations() {
            return Err(Error::invalid(format!(
                "{} prompts requested but only {} distinct ones exist",
                self.prompts,
                self.combinations()
            )));
        }
        let mut rng = seed::substream_rng(seed_val, "corpus", 0);
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.prompts);
        while out.len() < self.prompts {
            let len = rng.random_range(1..=self.max_unit_len);
            let unit: Vec<u8> = (0..len).map(|_| b'a' + rng.random_range(0..self.alphabet)).collect();
            let count = rng.random_range(1..=self.max_count);
            let mut prompt = unit.clone();
            prompt.extend_from_slice(format!("*{count}=").as_bytes());
            if seen.insert(prompt.clone()) {
                out.push(CorpusEntry {
                    prompt,
                    target: unit.repeat(count),
                });
            }
        }
        Ok(out)
    }
}

pub fn corpus_to_jsonl(entries: &[CorpusEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let rec = CorpusRecord {
            prompt: encode_text(&e.prompt),
            target: encode_text(&e.target),
        };
        out.push_str(&serde_json::to_string(&rec).expect("corpus record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(entries: &[CorpusEntry], path: &Path) -> Result<()> {
    io::write_atomic(path, corpus_to_jsonl(entries).as_bytes())
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>> {
    let bytes = io::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse { line: i + 1, message };
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
        out.push(CorpusEntry {
            prompt: decode_text(&rec.prompt).map_err(perr)?,
            target: decode_text(&rec.target).map_err(perr)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleKind {
    /// Negated edit distance to the target answer.
    TargetMatch,
    /// Target match minus `brevity_coefficient * |response|`. A negative
    /// coefficient rewards length.
    LengthPenalizedMatch { brevity_coefficient: f64 },
}

/// Deterministic scorer standing in for a learned reward model.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardOracle {
    pub kind: OracleKind,
    targets: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl RewardOracle {
    pub fn new(kind: OracleKind, corpus: &[CorpusEntry]) -> Self {
        Self {
            kind,
            targets: corpus.iter().map(|e| (e.prompt.clone(), e.target.clone())).collect(),
        }
    }

    pub fn target(&self, prompt: &[u8]) -> Option<&[u8]> {
        self.targets.get(prompt).map(Vec::as_slice)
    }

    pub fn score(&self, prompt: &[u8], response: &[u8]) -> Result<f64> {
        let target = self
            .target(prompt)
            .ok_or_else(|| Error::UnknownPrompt(String::from_utf8_lossy(prompt).into_owned()))?;
        let base = -(strsim::generic_levenshtein(&response.to_vec(), &target.to_vec()) as f64);
        Ok(match self.kind {
            OracleKind::TargetMatch => base,
            OracleKind::LengthPenalizedMatch { brevity_coefficient } => {
                base - brevity_coefficient * response.len() as f64
            }
        })
    }
}

/// Free-function form of [`RewardOracle::score`].
pub fn oracle_score(oracle: &RewardOracle, prompt: &[u8], response: &[u8]) -> Result<f64> {
    oracle.score(prompt, response)
}

/// Sampling settings for on-policy pair construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnPolicyConfig {
    pub samples_per_prompt: usize,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for OnPolicyConfig {
    fn default() -> Self {
        Self {
            samples_per_prompt: 5,
            temperature: 0.8,
            max_len: 256,
            seed: 0,
        }
    }
}

/// Output of [`build_onpolicy_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PreferencePair>,
    /// Prompts whose samples all tied on score.
    pub skipped: usize,
}

/// Samples `K` responses per prompt, keeps the best and worst by oracle
/// score (earliest sample wins ties) and skips prompts where every sample
/// scored the same.
pub fn build_onpolicy_pairs<M: LanguageModel + ?Sized>(
    model: &M,
    oracle: &RewardOracle,
    prompts: &[Vec<u8>],
    cfg: &OnPolicyConfig,
) -> Result<PairSet> {
    if cfg.samples_per_prompt < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples per prompt, got {}",
            cfg.samples_per_prompt
        )));
    }
    let built: Vec<Option<PreferencePair>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| build_one(model, oracle, prompt, i, cfg))
        .collect::<Result<_>>()?;
    let skipped = built.iter().filter(|p| p.is_none()).count();
    Ok(PairSet {
        pairs: built.into_iter().flatten().collect(),
        skipped,
    })
}

fn build_one<M: LanguageModel + ?Sized>(
    model: &M,
    oracle: &RewardOracle,
    prompt: &[u8],
    index: usize,
    cfg: &OnPolicyConfig,
) -> Result<Option<PreferencePair>> {
    let mut rng = seed::substream_rng(cfg.seed, "onpolicy", index as u64);
    let prompt_tokens = Vocabulary::prompt_tokens(prompt);
    let mut scored = Vec::with_capacity(cfg.samples_per_prompt);
    for _ in 0..cfg.samples_per_prompt {
        let s = crate::model::sample(model, &prompt_tokens, cfg.temperature, cfg.max_len, rng.next_u64())?;
        let bytes = s.response_bytes();
        let score = oracle.score(prompt, &bytes)?;
        scored.push((score, bytes));
    }
    let mut best = 0;
    let mut worst = 0;
    for (j, (s, _)) in scored.iter().enumerate() {
        if *s > scored[best].0 {
            best = j;
        }
        if *s < scored[worst].0 {
            worst = j;
        }
    }
    if scored[best].0 == scored[worst].0 {
        return Ok(None);
    }
    let (cs, chosen) = &scored[best];
    let (rs, rejected) = &scored[worst];
    let mut pair = PreferencePair::new(format!("p{index:05}"), prompt, chosen, rejected);
    pair.meta.insert("prompt_index".into(), Value::from(index as u64));
    pair.meta.insert("chosen_score".into(), Value::from(*cs));
    pair.meta.insert("rejected_score".into(), Value::from(*rs));
    pair.meta.insert("chosen_len".into(), Value::from(chosen.len() as u64));
    pair.meta.insert("rejected_len".into(), Value::from(rejected.len() as u64));
    Ok(Some(pair))
}

/// Pairs with a known length bias built from synthetic-task entries. The
/// chosen side is always the target. A coin per entry decides the rejected
/// side: the target with one or two units dropped (chosen is longer, a
/// verbosity-biased pair) or with one or two units appended (chosen is
/// shorter, brevity-biased).
pub fn length_biased_pairs(corpus: &[CorpusEntry], seed_val: u64) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::with_capacity(corpus.len());
    for (i, e) in corpus.iter().enumerate() {
        let unit_len = e
            .prompt
            .iter()
            .position(|&b| b == b'*')
            .filter(|&n| n > 0 && e.target.len() % n == 0 && !e.target.is_empty())
            .ok_or_else(|| Error::invalid(format!("entry {i} is not a repetition prompt")))?;
        let unit = &e.prompt[..unit_len];
        let count = e.target.len() / unit_len;
        let mut rng = seed::substream_rng(seed_val, "lengthmix", i as u64);
        let verbose = rng.random_bool(0.5);
        let k = rng.random_range(1..=2usize);
        let rejected = if verbose {
            unit.repeat(count.saturating_sub(k))
        } else {
            [e.target.as_slice(), &unit.repeat(k)].concat()
        };
        let mut pair = PreferencePair::new(format!("m{i:05}"), &e.prompt, &e.target, &rejected);
        let bias = if verbose { "verbosity" } else { "brevity" };
        pair.meta.insert("bias".into(), Value::from(bias));
        out.push(pair);
    }
    Ok(out)
}

/// Deterministic shuffle of `items` under `seed`.
pub fn shuffled<T: Clone>(items: &[T], seed_val: u64) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(&mut seed::substream_rng(seed_val, "shuffle", 0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BigramModel;

    fn pair(i: usize) -> PreferencePair {
        let mut p = PreferencePair::new(format!("id{i}"), format!("q{i}").as_bytes(), b"good", b"bad");
        p.meta.insert("n".into(), Value::from(i as u64));
        p
    }

    #[test]
    fn text_escaping() {
        assert_eq!(encode_text(b"plain"), "plain");
        let raw = [0xffu8, 0x00, 0x41];
        assert!(encode_text(&raw).starts_with("b64:"));
        assert_eq!(decode_text(&encode_text(&raw)).unwrap(), raw);
        // a literal string that looks like an escape is escaped itself
        let tricky = b"b64:hello";
        assert_eq!(decode_text(&encode_text(tricky)).unwrap(), tricky);
    }

    #[test]
    fn empty_and_single_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_pairs(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert!(load_pairs(&path).unwrap().is_empty());

        save_pairs(&[pair(1)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches('\n').count(), 1);
        assert!(text.ends_with('\n'));
        assert!(text.starts_with(r#"{"id":"id1","prompt":"q1","chosen":"good","rejected":"bad","meta":"#));
    }

    #[test]
    fn identical_responses_fail_on_their_line() {
        let mut lines = pairs_to_jsonl(&[pair(1), pair(2)]);
        lines.push_str(r#"{"id":"dup","prompt":"x","chosen":"same","rejected":"same","meta":{}}"#);
        lines.push('\n');
        match parse_pairs(&lines) {
            Err(Error::Validation { line, id, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(id, "dup");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}not json\n", pairs_to_jsonl(&[pair(0)]));
        assert!(matches!(parse_pairs(&text), Err(Error::Parse { line: 2, .. })));
        let unknown = r#"{"id":"a","prompt":"x","chosen":"y","rejected":"z","extra":1}"#;
        assert!(matches!(parse_pairs(unknown), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn thousand_pair_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("many.jsonl");
        let mut pairs: Vec<PreferencePair> = (0..1000).map(pair).collect();
        pairs[7].chosen = vec![0xfe, 0x80];
        pairs[9].meta.insert("score".into(), Value::from(-1.0 / 3.0));
        save_pairs(&pairs, &path).unwrap();
        assert_eq!(load_pairs(&path).unwrap(), pairs);
    }

    #[test]
    fn oracle_scores() {
        let corpus = vec![CorpusEntry {
            prompt: b"ab*2=".to_vec(),
            target: b"abab".to_vec(),
        }];
        let exact = RewardOracle::new(OracleKind::TargetMatch, &corpus);
        assert_eq!(exact.score(b"ab*2=", b"abab").unwrap(), 0.0);
        assert_eq!(exact.score(b"ab*2=", b"abac").unwrap(), -1.0);
        assert_eq!(exact.score(b"ab*2=", b"aba").unwrap(), -1.0);
        assert!(matches!(exact.score(b"zz*1=", b"z"), Err(Error::UnknownPrompt(_))));

        let zero = RewardOracle::new(OracleKind::LengthPenalizedMatch { brevity_coefficient: 0.0 }, &corpus);
        for r in [&b""[..], b"a", b"abab", b"ababababab"] {
            assert_eq!(zero.score(b"ab*2=", r).unwrap(), exact.score(b"ab*2=", r).unwrap());
        }
        let verbose = RewardOracle::new(OracleKind::LengthPenalizedMatch { brevity_coefficient: -2.0 }, &corpus);
        assert_eq!(verbose.score(b"ab*2=", b"ababab").unwrap(), -2.0 + 12.0);
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_distinct() {
        let task = SyntheticTask::default();
        let a = task.generate(5).unwrap();
        assert_eq!(a, task.generate(5).unwrap());
        assert_ne!(a, task.generate(6).unwrap());
        let prompts: std::collections::BTreeSet<_> = a.iter().map(|e| &e.prompt).collect();
        assert_eq!(prompts.len(), a.len());
        for e in &a {
            let s = String::from_utf8(e.prompt.clone()).unwrap();
            let (unit, rest) = s.split_once('*').unwrap();
            let count: usize = rest.trim_end_matches('=').parse().unwrap();
            assert_eq!(e.target, unit.repeat(count).into_bytes());
        }
        let too_many = SyntheticTask { prompts: 10_000, ..task };
        assert!(too_many.generate(0).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let c = SyntheticTask::default().generate(1).unwrap();
        save_corpus(&c, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    /// Bigram model over the full byte vocabulary whose only mass sits on
    /// `'a'` and EOS, so sampled responses are runs of `a` of random length.
    fn run_length_model(stop: f64) -> BigramModel {
        let v = crate::model::VOCAB_SIZE;
        let mut table = vec![vec![-1e9; v]; v];
        for row in table.iter_mut() {
            row[b'a' as usize] = (1.0 - stop).ln();
            row[crate::model::EOS] = stop.ln();
        }
        BigramModel::new(table, 64).unwrap()
    }

    #[test]
    fn deterministic_model_pairs_are_skipped() {
        let corpus = vec![CorpusEntry { prompt: b"a*3=".to_vec(), target: b"aaa".to_vec() }];
        let oracle = RewardOracle::new(OracleKind::TargetMatch, &corpus);
        let cfg = OnPolicyConfig { samples_per_prompt: 2, temperature: 0.0, max_len: 8, seed: 1 };
        let set = build_onpolicy_pairs(&run_length_model(0.3), &oracle, &[b"a*3=".to_vec()], &cfg).unwrap();
        assert!(set.pairs.is_empty());
        assert_eq!(set.skipped, 1);
        let bad = OnPolicyConfig { samples_per_prompt: 1, ..cfg };
        assert!(build_onpolicy_pairs(&run_length_model(0.3), &oracle, &[], &bad).is_err());
    }

    #[test]
    fn onpolicy_pairs_are_ordered_reproducible_and_length_biased() {
        let task = SyntheticTask { prompts: 15, alphabet: 1, max_unit_len: 3, max_count: 5 };
        let corpus = task.generate(3).unwrap();
        let prompts: Vec<Vec<u8>> = corpus.iter().map(|e| e.prompt.clone()).collect();
        let model = run_length_model(0.15);
        let oracle = RewardOracle::new(OracleKind::LengthPenalizedMatch { brevity_coefficient: -1.5 }, &corpus);
        let cfg = OnPolicyConfig { seed: 9, max_len: 30, ..OnPolicyConfig::default() };
        assert_eq!((cfg.samples_per_prompt, cfg.temperature), (5, 0.8));
        let set = build_onpolicy_pairs(&model, &oracle, &prompts, &cfg).unwrap();
        assert_eq!(set, build_onpolicy_pairs(&model, &oracle, &prompts, &cfg).unwrap());
        assert_eq!(set.pairs.len() + set.skipped, prompts.len());
        let mut chosen_len = 0.0;
        let mut rejected_len = 0.0;
        for p in &set.pairs {
            assert!(oracle.score(&p.prompt, &p.chosen).unwrap() > oracle.score(&p.prompt, &p.rejected).unwrap());
            chosen_len += p.chosen.len() as f64;
            rejected_len += p.rejected.len() as f64;
        }
        assert!(chosen_len > rejected_len);
    }

    #[test]
    fn length_biased_pairs_mix_both_directions() {
        let corpus = SyntheticTask::default().generate(4).unwrap();
        let pairs = length_biased_pairs(&corpus, 1).unwrap();
        assert_eq!(pairs, length_biased_pairs(&corpus, 1).unwrap());
        let oracle = RewardOracle::new(OracleKind::TargetMatch, &corpus);
        let (mut longer, mut shorter) = (0, 0);
        for p in &pairs {
            p.validate().unwrap();
            assert_eq!(oracle.target(&p.prompt).unwrap(), p.chosen.as_slice());
            assert!(oracle.score(&p.prompt, &p.chosen).unwrap() > oracle.score(&p.prompt, &p.rejected).unwrap());
            let verbose = p.meta["bias"] == "verbosity";
            assert_eq!(verbose, p.chosen.len() > p.rejected.len());
            if verbose { longer += 1 } else { shorter += 1 }
        }
        assert!(longer > 60 && shorter > 60, "{longer} {shorter}");
        let odd = [CorpusEntry { prompt: b"abc".to_vec(), target: b"abc".to_vec() }];
        assert!(length_biased_pairs(&odd, 0).is_err());
    }
}
