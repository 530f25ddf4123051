//! Command-line front end for the decaypo library.
//!
//! [`run`] parses arguments, resolves the configuration and dispatches to a
//! subcommand. Exit codes: 0 on success, 1 when the arguments or
//! configuration are invalid, 2 when the run itself fails.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgMatches, Command};

use config::{flag_name, value_name, RunConfig, Section, GLOBAL_SECTION, SECTIONS, SEED_ENV};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, keys or values.
    Usage(String),
    /// Anything that went wrong while running.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<decaypo::Error> for CliError {
    fn from(e: decaypo::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub const ANALYSES: &[&str] = &["kl-position", "ref-margin", "prob-position", "length-bias"];

const ABOUT: &[(&str, &str)] = &[
    ("pretrain", "Supervised warm-up of a fresh model on the synthetic corpus"),
    ("build-pairs", "Build preference pairs from model samples or a length-mixed recipe"),
    ("train", "Preference-optimise a checkpoint on pairs"),
    ("sample", "Sample responses for every corpus prompt"),
    ("eval", "Oracle win rate of a candidate against a baseline"),
    ("analyze", "Per-position and per-pair diagnostics"),
    ("mdp-verify", "Suboptimality decomposition and bound sweep on random tabular MDPs"),
];

fn with_keys(mut cmd: Command, sec: &Section) -> Command {
    cmd = cmd.arg(Arg::new("config").long("config").value_name("PATH").help("config file (TOML)"));
    for k in GLOBAL_SECTION.keys().chain(sec.keys()) {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(flag_name(k.name))
                .value_name(value_name(k))
                .num_args(1)
                .allow_hyphen_values(true)
                .help(k.help),
        );
    }
    cmd
}

fn cli() -> Command {
    let mut root = Command::new("decaypo")
        .about("Preference optimisation with temporal decay, at desk scale")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sec in SECTIONS {
        let about = ABOUT.iter().find(|a| a.0 == sec.name).map_or("", |a| a.1);
        let cmd = if sec.name == "analyze" {
            let mut c = Command::new("analyze").about(about).subcommand_required(true);
            for a in ANALYSES {
                c = c.subcommand(with_keys(Command::new(*a), sec));
            }
            c
        } else {
            with_keys(Command::new(sec.name).about(about), sec)
        };
        root = root.subcommand(cmd);
    }
    root
}

fn resolve(sec: &'static Section, m: &ArgMatches) -> Result<RunConfig, CliError> {
    let flags = GLOBAL_SECTION
        .keys()
        .chain(sec.keys())
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name, v.clone())))
        .collect();
    let file = m.get_one::<String>("config").map(PathBuf::from);
    RunConfig::resolve(sec, file.as_deref(), std::env::var(SEED_ENV).ok(), flags)
}

fn dispatch(argv: Vec<OsString>) -> Result<(), CliError> {
    let matches = match cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    Ok(())
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    Err(CliError::Usage("a subcommand is required".into()))
                }
                _ => Err(CliError::Usage(e.render().to_string().trim_end().to_owned())),
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sec = config::section(name);
    match name {
        "analyze" => {
            let (which, m) = sub.subcommand().expect("analysis is required");
            commands::analyze(which, &resolve(sec, m)?)
        }
        _ => {
            let cfg = resolve(sec, sub)?;
            match name {
                "pretrain" => commands::pretrain(&cfg),
                "build-pairs" => commands::build_pairs(&cfg),
                "train" => commands::train(&cfg),
                "sample" => commands::sample(&cfg),
                "eval" => commands::eval(&cfg),
                "mdp-verify" => commands::mdp_verify(&cfg),
                _ => unreachable!("every section has a command"),
            }
        }
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match dispatch(argv.into_iter().map(Into::into).collect()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("decaypo: {e}");
            e.exit_code()
        }
    }
}
