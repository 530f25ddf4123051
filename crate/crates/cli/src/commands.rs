//! Subcommand bodies. Each reads its inputs, writes every output atomically
//! under `out`, and finishes with `<command>.resolved.toml`.

use std::path::{Path, PathBuf};

use decaypo::analysis::{
    gap_table_to_csv, kl_per_position, loss_by_length_gap, prob_per_position, ref_margin_density, sequence_margins,
    signed_gap_means, spearman, survivor_counts, PositionCurve,
};
use decaypo::checkpoint::Checkpoint;
use decaypo::data::{
    build_onpolicy_pairs, decode_text, encode_text, length_biased_pairs, load_corpus, load_pairs, pairs_to_jsonl,
    CorpusEntry, OnPolicyConfig, OracleKind, RewardOracle, SyntheticTask,
};
use decaypo::io::write_atomic;
use decaypo::mdp::{bound_sweep, SweepConfig};
use decaypo::seed::substream;
use decaypo::train::{evaluate_winrate, metrics_to_jsonl, pretrain_sft, score_pairs, train as run_training, SftConfig, TrainConfig};
use decaypo::{DecayKind, DecayOrigin, DecaySchedule, LossConfig, LossMethod, ModelConfig, TokenSequence, Vocabulary};
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

type Res = Result<(), CliError>;

/// Rejects values the library would refuse, naming the key.
fn usage(key: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{key} (--{}): {e}", crate::config::flag_name(key)))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.path("out")?;
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Res {
    write_atomic(&dir.join(name), bytes.as_ref())?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> Res {
    let mut text = serde_json::to_string_pretty(v).expect("json value serializes");
    text.push('\n');
    write(dir, name, text)
}

fn finish(dir: &Path, command: &str, cfg: &RunConfig) -> Res {
    write(dir, &format!("{command}.resolved.toml"), cfg.snapshot())
}

fn load_checkpoint(cfg: &RunConfig, key: &str) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(&cfg.path(key)?)?)
}

fn positive(cfg: &RunConfig, key: &str) -> Result<usize, CliError> {
    match cfg.usize(key)? {
        0 => Err(usage(key, "must be at least 1")),
        n => Ok(n),
    }
}

fn oracle(cfg: &RunConfig, corpus: &[CorpusEntry]) -> Result<RewardOracle, CliError> {
    let kind = match cfg.text("oracle")? {
        "target-match" => OracleKind::TargetMatch,
        "length-penalized" => OracleKind::LengthPenalizedMatch { brevity_coefficient: cfg.f64("brevity_coefficient")? },
        other => return Err(usage("oracle", format!("unknown oracle {other:?}; use target-match or length-penalized"))),
    };
    Ok(RewardOracle::new(kind, corpus))
}

fn prompts(corpus: &[CorpusEntry]) -> Vec<Vec<u8>> {
    corpus.iter().map(|e| e.prompt.clone()).collect()
}

/// Loss settings shared by `train` and `analyze`.
fn loss_config(cfg: &RunConfig) -> Result<LossConfig, CliError> {
    let kind: DecayKind = cfg.choice("schedule")?;
    let origin: DecayOrigin = cfg.choice("origin")?;
    let loss = LossConfig {
        method: cfg.choice::<LossMethod>("method")?,
        beta: cfg.f64("beta")?,
        schedule: DecaySchedule::new(kind, cfg.f64("gamma")?, origin),
        tau: cfg.f64("tau")?,
        lambda_w: cfg.f64("lambda_w")?,
        lambda_l: cfg.f64("lambda_l")?,
        lambda_orpo: cfg.f64("lambda_orpo")?,
        target_margin: cfg.f64("target_margin")?,
        sampo_seed: cfg.opt_u64("sampo_seed")?.unwrap_or(substream(cfg.u64("seed")?, "sampo", 0)),
    };
    loss.validate().map_err(|e| CliError::Usage(format!("invalid loss settings: {e}")))?;
    for w in loss.schedule.warnings() {
        log::warn!("{w}");
    }
    Ok(loss)
}

pub fn pretrain(cfg: &RunConfig) -> Res {
    let seed = cfg.u64("seed")?;
    let corpus = match cfg.opt_path("corpus") {
        Some(p) => load_corpus(&p)?,
        None => SyntheticTask {
            prompts: positive(cfg, "prompts")?,
            alphabet: u8::try_from(positive(cfg, "alphabet")?).map_err(|_| usage("alphabet", "must be at most 255"))?,
            max_unit_len: positive(cfg, "max_unit_len")?,
            max_count: positive(cfg, "max_count")?,
        }
        .generate(substream(seed, "data", 0))
        .map_err(|e| CliError::Usage(format!("invalid synthetic task: {e}")))?,
    };
    let model = ModelConfig {
        d_model: positive(cfg, "d_model")?,
        context: positive(cfg, "context")?,
        blocks: positive(cfg, "blocks")?,
        mlp_hidden: positive(cfg, "mlp_hidden")?,
        init_seed: substream(seed, "init", 0),
    };
    let init = Checkpoint::init(model).map_err(|e| CliError::Usage(format!("invalid model settings: {e}")))?;
    let sft = SftConfig {
        learning_rate: cfg.f64("learning_rate")?,
        batch_size: positive(cfg, "batch_size")?,
        steps: cfg.usize("steps")?,
        warmup_fraction: cfg.f64("warmup_fraction")?,
        seed: substream(seed, "data", 1),
    };
    if !(sft.learning_rate > 0.0) {
        return Err(usage("learning_rate", "must be > 0"));
    }
    if !(0.0..1.0).contains(&sft.warmup_fraction) {
        return Err(usage("warmup_fraction", "must lie in [0, 1)"));
    }
    let dir = out_dir(cfg)?;
    log::info!("pretraining {} parameters for {} steps on {} prompts", init.model.param_count(), sft.steps, corpus.len());
    let (ck, metrics) = pretrain_sft(&sft, &corpus, &init)?;
    write(&dir, "corpus.jsonl", decaypo::data::corpus_to_jsonl(&corpus))?;
    write(&dir, "init.ckpt", init.to_bytes())?;
    write(&dir, "sft.ckpt", ck.to_bytes())?;
    write(&dir, "sft_metrics.jsonl", metrics_to_jsonl(&metrics))?;
    finish(&dir, "pretrain", cfg)
}

pub fn build_pairs(cfg: &RunConfig) -> Res {
    let seed = cfg.u64("seed")?;
    let corpus = load_corpus(&cfg.path("corpus")?)?;
    let (pairs, skipped) = match cfg.text("source")? {
        "onpolicy" => {
            let model = load_checkpoint(cfg, "model")?;
            let oracle = oracle(cfg, &corpus)?;
            let op = OnPolicyConfig {
                samples_per_prompt: positive(cfg, "samples_per_prompt")?,
                temperature: cfg.f64("temperature")?,
                max_len: positive(cfg, "max_len")?,
                seed: substream(seed, "sampling", 0),
            };
            let set = build_onpolicy_pairs(&model.model, &oracle, &prompts(&corpus), &op)?;
            (set.pairs, set.skipped)
        }
        "length-mixed" => (length_biased_pairs(&corpus, substream(seed, "data", 2))?, 0),
        other => return Err(usage("source", format!("unknown source {other:?}; use onpolicy or length-mixed"))),
    };
    let dir = out_dir(cfg)?;
    log::info!("{} pairs, {} prompts skipped", pairs.len(), skipped);
    write(&dir, "pairs.jsonl", pairs_to_jsonl(&pairs))?;
    write_json(&dir, "pairs_summary.json", &json!({ "pairs": pairs.len(), "prompts": corpus.len(), "skipped": skipped }))?;
    finish(&dir, "build-pairs", cfg)
}

pub fn train(cfg: &RunConfig) -> Res {
    let seed = cfg.u64("seed")?;
    let loss = loss_config(cfg)?;
    let tc = TrainConfig {
        loss,
        learning_rate: cfg.f64("learning_rate")?,
        batch_size: positive(cfg, "batch_size")?,
        warmup_fraction: cfg.f64("warmup_fraction")?,
        epochs: positive(cfg, "epochs")?,
        steps: cfg.opt_usize("steps")?,
        seed: substream(seed, "data", 3),
        weight_decay: cfg.f64("weight_decay")?,
        adam_beta1: cfg.f64("adam_beta1")?,
        adam_beta2: cfg.f64("adam_beta2")?,
        adam_eps: cfg.f64("adam_eps")?,
        grad_clip: cfg.opt_f64("grad_clip")?,
    };
    tc.validate().map_err(|e| CliError::Usage(format!("invalid training settings: {e}")))?;
    let reference = match (loss.method.needs_reference(), cfg.is_set("reference")) {
        (true, true) => Some(load_checkpoint(cfg, "reference")?),
        (true, false) => return Err(usage("reference", format!("method {} needs a reference checkpoint", loss.method))),
        (false, given) => {
            if given {
                log::warn!("method {} ignores the reference checkpoint", loss.method);
            }
            None
        }
    };
    let pairs = load_pairs(&cfg.path("pairs")?)?;
    let init = load_checkpoint(cfg, "init")?;
    let dir = out_dir(cfg)?;
    let out = run_training(&tc, &pairs, &init, reference.as_ref())?;
    if out.skipped > 0 {
        log::warn!("{} pairs do not fit the context and were skipped", out.skipped);
    }
    if let Some(last) = out.metrics.last() {
        log::info!("step {}: loss {:.4}, margin {:.4}", last.step, last.loss, last.margin);
    }
    write(&dir, "model.ckpt", out.checkpoint.to_bytes())?;
    write(&dir, "metrics.jsonl", metrics_to_jsonl(&out.metrics))?;
    finish(&dir, "train", cfg)
}

pub fn sample(cfg: &RunConfig) -> Res {
    let root = substream(cfg.u64("seed")?, "sampling", 1);
    let model = load_checkpoint(cfg, "model")?;
    let corpus = load_corpus(&cfg.path("corpus")?)?;
    let k = positive(cfg, "samples_per_prompt")?;
    let (temperature, max_len) = (cfg.f64("temperature")?, positive(cfg, "max_len")?);
    let mut text = String::new();
    for (i, e) in corpus.iter().enumerate() {
        for j in 0..k {
            let s = substream(root, "sample", (i * k + j) as u64);
            let seq = model.model.sample(&Vocabulary::prompt_tokens(&e.prompt), temperature, max_len, s)?;
            let line = json!({
                "index": i,
                "sample": j,
                "prompt": encode_text(&e.prompt),
                "response": encode_text(&seq.response_bytes()),
                "eos": seq.response.last() == Some(&Vocabulary::EOS),
            });
            text.push_str(&line.to_string());
            text.push('\n');
        }
    }
    let dir = out_dir(cfg)?;
    write(&dir, "samples.jsonl", text)?;
    finish(&dir, "sample", cfg)
}

/// Reads `samples.jsonl` back into token sequences.
fn load_samples(path: &Path) -> Result<Vec<TokenSequence>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read samples {}: {e}", path.display())))?;
    let bad = |line: usize, m: String| CliError::Runtime(format!("{}:{line}: {m}", path.display()));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(n + 1, e.to_string()))?;
        let field = |k: &str| v.get(k).and_then(|x| x.as_str()).ok_or_else(|| bad(n + 1, format!("missing text field {k:?}")));
        let prompt = decode_text(field("prompt")?).map_err(|e| bad(n + 1, e))?;
        let response = decode_text(field("response")?).map_err(|e| bad(n + 1, e))?;
        let eos = v.get("eos").and_then(|x| x.as_bool()).ok_or_else(|| bad(n + 1, "missing flag \"eos\"".into()))?;
        let mut tokens = Vocabulary::encode(&response);
        if eos {
            tokens.push(Vocabulary::EOS);
        }
        if tokens.is_empty() {
            continue;
        }
        out.push(TokenSequence::new(Vocabulary::prompt_tokens(&prompt), tokens));
    }
    Ok(out)
}

pub fn eval(cfg: &RunConfig) -> Res {
    let candidate = load_checkpoint(cfg, "candidate")?;
    let baseline = load_checkpoint(cfg, "baseline")?;
    let corpus = load_corpus(&cfg.path("corpus")?)?;
    let oracle = oracle(cfg, &corpus)?;
    let wr = evaluate_winrate(
        &candidate.model,
        &baseline.model,
        &oracle,
        &prompts(&corpus),
        cfg.f64("temperature")?,
        positive(cfg, "max_len")?,
        substream(cfg.u64("seed")?, "sampling", 2),
    )?;
    log::info!("win {} tie {} lose {}: rate {:.4}", wr.win, wr.tie, wr.lose, wr.rate());
    let dir = out_dir(cfg)?;
    write_json(
        &dir,
        "winrate.json",
        &json!({ "win": wr.win, "tie": wr.tie, "lose": wr.lose, "total": wr.total(), "rate": wr.rate() }),
    )?;
    finish(&dir, "eval", cfg)
}

/// Rank correlation of a curve over positions with enough survivors.
fn curve_summary(curve: &PositionCurve, samples: &[TokenSequence], max_pos: usize, min_survivors: usize) -> serde_json::Value {
    let counts = survivor_counts(samples, max_pos);
    let kept: Vec<(f64, f64)> = curve
        .rows
        .iter()
        .filter(|(p, _)| counts[*p] >= min_survivors)
        .map(|&(p, v)| (p as f64, v))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = kept.iter().copied().unzip();
    let rho = if kept.len() >= 2 { Some(spearman(&xs, &ys)) } else { None };
    json!({ "samples": samples.len(), "positions": kept.len(), "min_survivors": min_survivors, "spearman": rho })
}

pub fn analyze(which: &str, cfg: &RunConfig) -> Res {
    let max_pos = positive(cfg, "max_pos")?;
    let min_survivors = cfg.usize("min_survivors")?;
    let (stem, csv, summary) = match which {
        "kl-position" => {
            let policy = load_checkpoint(cfg, "policy")?;
            let reference = load_checkpoint(cfg, "reference")?;
            let samples = load_samples(&cfg.path("samples")?)?;
            let curve = kl_per_position(&policy.model, &reference.model, &samples, max_pos)?;
            let summary = curve_summary(&curve, &samples, max_pos, min_survivors);
            ("kl_position", curve.to_csv(&["mean KL(policy || reference) per response position"]), summary)
        }
        "prob-position" => {
            let model = load_checkpoint(cfg, "model")?;
            let samples = load_samples(&cfg.path("samples")?)?;
            let curve = prob_per_position(&model.model, &samples, max_pos)?;
            let summary = curve_summary(&curve, &samples, max_pos, min_survivors);
            ("prob_position", curve.to_csv(&["mean probability of the realised token per response position"]), summary)
        }
        "ref-margin" => {
            let reference = load_checkpoint(cfg, "reference")?;
            let pairs = load_pairs(&cfg.path("pairs")?)?;
            let bins = cfg.usize("bins")?;
            if bins < 2 {
                return Err(usage("bins", "need at least 2 bins"));
            }
            let margins = sequence_margins(&reference.model, &pairs)?;
            let hist = ref_margin_density(&reference.model, &pairs, bins)?;
            let n = margins.len() as f64;
            let mean = margins.iter().sum::<f64>() / n;
            let var = if margins.len() > 1 {
                margins.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ("ref_margin", hist.to_csv(&["density of the reference margin log p(chosen) - log p(rejected)"]), json!({ "pairs": margins.len(), "mean": mean, "variance": var }))
        }
        "length-bias" => return length_bias(cfg),
        other => unreachable!("unknown analysis {other}"),
    };
    let dir = out_dir(cfg)?;
    write(&dir, &format!("{stem}.csv"), csv)?;
    write_json(&dir, &format!("{stem}.json"), &summary)?;
    finish(&dir, &format!("analyze-{which}"), cfg)
}

/// Mean loss by length gap for the configured loss and for plain DPO at the
/// same beta, both on the same scores.
fn length_bias(cfg: &RunConfig) -> Res {
    let loss = loss_config(cfg)?;
    let boundaries: Vec<i64> = cfg
        .list("gap_bins")?
        .into_iter()
        .map(|b| if b.fract() == 0.0 { Ok(b as i64) } else { Err(usage("gap_bins", format!("{b} is not an integer"))) })
        .collect::<Result<_, _>>()?;
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("gap_bins", "need at least two strictly increasing boundaries"));
    }
    let policy = load_checkpoint(cfg, "policy")?;
    let reference = if loss.method.needs_reference() || cfg.is_set("reference") {
        Some(load_checkpoint(cfg, "reference")?)
    } else {
        None
    };
    let dpo = LossConfig { method: LossMethod::D2po, schedule: DecaySchedule::uniform(), ..loss };
    let pairs = load_pairs(&cfg.path("pairs")?)?;
    let scores = score_pairs(&policy.model, reference.as_ref().map(|r| &r.model), &pairs)?;
    let mut csv = String::new();
    let mut summary = serde_json::Map::new();
    for (name, lc) in [("configured", &loss), ("dpo", &dpo)] {
        if name == "dpo" && reference.is_none() {
            log::warn!("no reference checkpoint; skipping the DPO comparison");
            continue;
        }
        let table = loss_by_length_gap(lc, &scores, &boundaries)?;
        let (pos, neg) = signed_gap_means(lc, &scores)?;
        let label = format!("{name}: method {}, schedule {}, gamma {}", lc.method, lc.schedule.kind, lc.schedule.gamma);
        csv.push_str(&gap_table_to_csv(&table, &[&label]));
        summary.insert(name.into(), json!({ "pos": pos, "neg": neg, "imbalance": (pos - neg).abs() }));
    }
    summary.insert("pairs".into(), json!(pairs.len()));
    let dir = out_dir(cfg)?;
    write(&dir, "length_bias.csv", csv)?;
    write_json(&dir, "length_bias.json", &serde_json::Value::Object(summary))?;
    finish(&dir, "analyze-length-bias", cfg)
}

pub fn mdp_verify(cfg: &RunConfig) -> Res {
    let root = cfg.u64("seed")?;
    let n = cfg.u64("seeds")?;
    let gammas = cfg.list("gammas")?;
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        return Err(usage("gammas", format!("{g} is outside (0, 1]")));
    }
    let sweep = SweepConfig {
        max_states: positive(cfg, "max_states")?,
        max_actions: positive(cfg, "max_actions")?,
        max_horizon: positive(cfg, "max_horizon")?,
        reward_bound: cfg.f64("reward_bound")?,
        beta: cfg.f64("beta")?,
    };
    if !(sweep.reward_bound > 0.0) {
        return Err(usage("reward_bound", "must be > 0"));
    }
    if !(sweep.beta > 0.0) {
        return Err(usage("beta", "must be > 0"));
    }
    let seeds: Vec<u64> = (0..n).map(|i| substream(root, "data", i)).collect();
    let rows = bound_sweep(&sweep, &seeds, &gammas)?;
    let mut csv = String::from("seed,gamma,delta1,delta2,delta3,subopt,term1,term2,bound,tv,holds\n");
    let mut violations = 0;
    for (i, row) in rows.iter().enumerate() {
        let r = &row.report;
        violations += usize::from(!r.holds());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            i / gammas.len().max(1),
            r.gamma,
            r.delta1,
            r.delta2,
            r.delta3,
            r.subopt,
            r.bound_term1,
            r.bound_term2,
            r.bound_total,
            r.tv_expectation,
            u8::from(r.holds())
        ));
    }
    log::info!("{} rows, {} violations", rows.len(), violations);
    let dir = out_dir(cfg)?;
    write(&dir, "mdp_verify.csv", csv)?;
    finish(&dir, "mdp-verify", cfg)
}
