use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn decaypo(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_decaypo"));
    cmd.args(args).env("RUST_LOG", "warn");
    match env_seed {
        Some(s) => cmd.env("DECAYPO_SEED", s),
        None => cmd.env_remove("DECAYPO_SEED"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = decaypo(args, None);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A tiny pretrained model and corpus, enough to exercise every command.
fn tiny(dir: &Path) -> PathBuf {
    let sft = dir.join("sft");
    ok(&[
        "pretrain", "--out", p(&sft), "--prompts", "24", "--d-model", "8", "--context", "48", "--blocks", "1",
        "--mlp-hidden", "8", "--steps", "4",
    ]);
    sft
}

#[test]
fn unknown_flag_exits_1_and_names_it() {
    let out = decaypo(&["train", "--no-such-flag", "3"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--no-such-flag"), "{}", stderr(&out));
}

#[test]
fn bad_values_exit_1_and_name_the_key() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("o");
    let cases: &[(&[&str], &str)] = &[
        (&["mdp-verify", "--out", p(&out_dir), "--seeds", "many"], "--seeds"),
        (&["mdp-verify", "--out", p(&out_dir), "--gammas", "0.5,x"], "gammas"),
        (&["mdp-verify", "--out", p(&out_dir), "--gammas", "0.5,1.5"], "--gammas"),
        (&["mdp-verify", "--seeds", "3"], "--out"),
        (&["train", "--out", p(&out_dir), "--beta", "nan"], "--beta"),
        (&["train", "--out", p(&out_dir), "--method", "rlhf"], "--method"),
        (&["train", "--out", p(&out_dir), "--pairs", "x", "--init", "y"], "--reference"),
    ];
    for (args, needle) in cases {
        let out = decaypo(args, None);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains(needle), "{args:?}: {}", stderr(&out));
    }
    let out = decaypo(&["mdp-verify", "--out", p(&out_dir)], Some("-4"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("DECAYPO_SEED"));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = decaypo(
        &["sample", "--out", p(dir.path()), "--model", "missing.ckpt", "--corpus", "missing.jsonl"],
        None,
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn help_exits_0() {
    for args in [&["--help"][..], &["train", "--help"], &["analyze", "kl-position", "--help"]] {
        let out = decaypo(args, None);
        assert_eq!(out.status.code(), Some(0));
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    assert_eq!(decaypo(&[], None).status.code(), Some(1));
}

#[test]
fn config_files_are_strict() {
    let dir = TempDir::new().unwrap();
    let write = |name: &str, text: &str| {
        let f = dir.path().join(name);
        std::fs::write(&f, text).unwrap();
        f
    };
    let out_dir = dir.path().join("o");
    for (text, needle) in [
        ("[mdp-verify]\nseedz = 3\n", "mdp-verify.seedz"),
        ("[training]\nbeta = 1\n", "[training]"),
        ("seed = 3\n", "seed"),
        ("[train]\nbeta = 1\nlearnig_rate = 0.1\n", "train.learnig_rate"),
        ("[global]\nseed = \"abc\"\n", "--seed"),
    ] {
        let f = write("bad.toml", text);
        let out = decaypo(&["mdp-verify", "--config", p(&f), "--out", p(&out_dir)], None);
        assert_eq!(out.status.code(), Some(1), "{text}");
        assert!(stderr(&out).contains(needle), "{text}: {}", stderr(&out));
    }
}

#[test]
fn precedence_is_defaults_file_env_flags() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("c.toml");
    std::fs::write(&f, "[global]\nseed = 5\n\n[mdp-verify]\nseeds = 2\nmax_horizon = 3\n").unwrap();
    let out_dir = dir.path().join("o");
    let snapshot = || String::from_utf8(read(out_dir.join("mdp-verify.resolved.toml"))).unwrap();
    let base = ["mdp-verify", "--config", p(&f), "--out", p(&out_dir), "--gammas", "0.5"];

    assert!(decaypo(&base, None).status.success());
    let s = snapshot();
    assert!(s.contains("seed = 5") && s.contains("seeds = 2") && s.contains("max_horizon = 3") && s.contains("max_states = 5"), "{s}");

    assert!(decaypo(&base, Some("9")).status.success());
    assert!(snapshot().contains("seed = 9"));

    let mut with_flag = base.to_vec();
    with_flag.extend(["--seed", "11", "--seeds", "1"]);
    assert!(decaypo(&with_flag, Some("9")).status.success());
    let s = snapshot();
    assert!(s.contains("seed = 11") && s.contains("seeds = 1"), "{s}");
}

#[test]
fn mdp_verify_example_sweep_holds_everywhere() {
    let dir = TempDir::new().unwrap();
    ok(&["mdp-verify", "--out", p(dir.path()), "--seeds", "100", "--gammas", "0.5,0.9,0.95,0.98,1.0"]);
    let csv = String::from_utf8(read(dir.path().join("mdp_verify.csv"))).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seed,gamma,delta1,delta2,delta3,subopt,term1,term2,bound,tv,holds"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().all(|r| r.ends_with(",1")));
}

#[test]
fn snapshot_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    ok(&["mdp-verify", "--out", p(&a), "--seeds", "7", "--gammas", "0.3,0.9", "--beta", "0.5", "--seed", "3"]);
    let b = dir.path().join("b");
    ok(&["mdp-verify", "--config", p(&a.join("mdp-verify.resolved.toml")), "--out", p(&b)]);
    assert_eq!(read(a.join("mdp_verify.csv")), read(b.join("mdp_verify.csv")));

    let sft = tiny(dir.path());
    let pairs = dir.path().join("pairs");
    ok(&["build-pairs", "--source", "length-mixed", "--out", p(&pairs), "--corpus", p(&sft.join("corpus.jsonl"))]);
    let t1 = dir.path().join("t1");
    let ck = sft.join("sft.ckpt");
    ok(&[
        "train", "--out", p(&t1), "--pairs", p(&pairs.join("pairs.jsonl")), "--init", p(&ck), "--reference", p(&ck),
        "--steps", "3", "--batch-size", "4", "--beta", "0.7", "--adam-eps", "1e-7", "--gamma", "0.9", "--seed", "2",
    ]);
    let t2 = dir.path().join("t2");
    ok(&["train", "--config", p(&t1.join("train.resolved.toml")), "--out", p(&t2)]);
    assert_eq!(read(t1.join("model.ckpt")), read(t2.join("model.ckpt")));
    assert_eq!(read(t1.join("metrics.jsonl")), read(t2.join("metrics.jsonl")));
}

#[test]
fn unit_gamma_and_uniform_schedule_give_identical_metrics() {
    let dir = TempDir::new().unwrap();
    let sft = tiny(dir.path());
    let pairs = dir.path().join("pairs");
    ok(&["build-pairs", "--source", "length-mixed", "--out", p(&pairs), "--corpus", p(&sft.join("corpus.jsonl"))]);
    let ck = sft.join("sft.ckpt");
    let jitter = dir.path().join("jitter");
    // a policy that differs from the reference, so margins are nonzero
    ok(&[
        "train", "--out", p(&jitter), "--pairs", p(&pairs.join("pairs.jsonl")), "--init", p(&ck), "--reference", p(&ck),
        "--steps", "2", "--learning-rate", "0.01",
    ]);
    let init = jitter.join("model.ckpt");
    let pairs_file = pairs.join("pairs.jsonl");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "train", "--out", p(&out), "--method", "d2po", "--pairs", p(&pairs_file), "--init", p(&init),
            "--reference", p(&ck), "--steps", "4", "--batch-size", "6",
        ];
        args.extend_from_slice(extra);
        ok(&args);
        read(out.join("metrics.jsonl"))
    };
    let unit = run("unit", &["--gamma", "1.0"]);
    let uniform = run("uniform", &["--schedule", "uniform"]);
    let decayed = run("decayed", &["--gamma", "0.5"]);
    assert_eq!(unit, uniform);
    assert_ne!(unit, decayed);
    let first = String::from_utf8(unit).unwrap();
    assert!(first.lines().next().unwrap().contains("\"grad_norm\""));
}

#[test]
fn every_command_writes_outputs_and_a_snapshot() {
    let dir = TempDir::new().unwrap();
    let sft = tiny(dir.path());
    for f in ["corpus.jsonl", "init.ckpt", "sft.ckpt", "sft_metrics.jsonl", "pretrain.resolved.toml"] {
        assert!(sft.join(f).is_file(), "{f}");
    }
    let corpus = sft.join("corpus.jsonl");
    let ck = sft.join("sft.ckpt");
    let pairs = dir.path().join("pairs");
    ok(&["build-pairs", "--out", p(&pairs), "--corpus", p(&corpus), "--model", p(&ck), "--max-len", "8", "--samples-per-prompt", "3"]);
    let summary: serde_json::Value = serde_json::from_slice(&read(pairs.join("pairs_summary.json"))).unwrap();
    assert_eq!(summary["prompts"], 24);
    let pairs_file = pairs.join("pairs.jsonl");
    let trained = dir.path().join("ref-free");
    ok(&["train", "--out", p(&trained), "--method", "simpo", "--pairs", p(&pairs_file), "--init", p(&ck), "--steps", "2"]);
    let policy = trained.join("model.ckpt");

    let samples = dir.path().join("samples");
    ok(&["sample", "--out", p(&samples), "--model", p(&policy), "--corpus", p(&corpus), "--samples-per-prompt", "2", "--max-len", "6"]);
    let text = String::from_utf8(read(samples.join("samples.jsonl"))).unwrap();
    assert_eq!(text.lines().count(), 48);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for k in ["index", "sample", "prompt", "response", "eos"] {
        assert!(first.get(k).is_some(), "{k}");
    }

    let ev = dir.path().join("eval");
    ok(&["eval", "--out", p(&ev), "--candidate", p(&policy), "--baseline", p(&ck), "--corpus", p(&corpus), "--max-len", "6"]);
    let wr: serde_json::Value = serde_json::from_slice(&read(ev.join("winrate.json"))).unwrap();
    assert_eq!(wr["total"], 24);
    let (w, t, l) = (wr["win"].as_f64().unwrap(), wr["tie"].as_f64().unwrap(), wr["lose"].as_f64().unwrap());
    assert_eq!(w + t + l, 24.0);
    assert!((wr["rate"].as_f64().unwrap() - (w + t / 2.0) / 24.0).abs() < 1e-15);

    let an = dir.path().join("an");
    let s = samples.join("samples.jsonl");
    ok(&["analyze", "kl-position", "--out", p(&an), "--policy", p(&policy), "--reference", p(&ck), "--samples", p(&s), "--min-survivors", "5"]);
    ok(&["analyze", "prob-position", "--out", p(&an), "--model", p(&ck), "--samples", p(&s)]);
    ok(&["analyze", "ref-margin", "--out", p(&an), "--reference", p(&ck), "--pairs", p(&pairs_file), "--bins", "5"]);
    let mixed = dir.path().join("mixed");
    ok(&["build-pairs", "--source", "length-mixed", "--out", p(&mixed), "--corpus", p(&corpus)]);
    let mixed_file = mixed.join("pairs.jsonl");
    ok(&["analyze", "length-bias", "--out", p(&an), "--policy", p(&policy), "--reference", p(&ck), "--pairs", p(&mixed_file)]);
    for f in [
        "kl_position.csv", "kl_position.json", "prob_position.csv", "prob_position.json", "ref_margin.csv", "ref_margin.json",
        "length_bias.csv", "length_bias.json", "analyze-kl-position.resolved.toml", "analyze-length-bias.resolved.toml",
    ] {
        assert!(an.join(f).is_file(), "{f}");
    }
    let lb: serde_json::Value = serde_json::from_slice(&read(an.join("length_bias.json"))).unwrap();
    for side in ["configured", "dpo"] {
        let v = &lb[side];
        let gap = (v["pos"].as_f64().unwrap() - v["neg"].as_f64().unwrap()).abs();
        assert!((gap - v["imbalance"].as_f64().unwrap()).abs() < 1e-15);
    }
    // no stray temp files from atomic writes
    for entry in std::fs::read_dir(&an).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(!name.contains("tmp"), "{name}");
    }
}
