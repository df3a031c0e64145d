//! The `sda` command line: feature extraction, toy corpora, training,
//! conversion, toy evaluation and self-checks.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};
use sda_core::Error;

pub use config::{RunConfig, EFFECTIVE_CONFIG, ENV_PREFIX, KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_ARTIFACT: i32 = 4;

/// Maps a core error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } | Error::DomainError(_) => EXIT_DIVERGED,
        Error::CorruptCheckpoint(_)
        | Error::VersionError { .. }
        | Error::ShapeMismatch(_)
        | Error::LayoutMismatch(_)
        | Error::BadFormat { .. }
        | Error::HeaderMismatch { .. } => EXIT_ARTIFACT,
        _ => EXIT_INPUT,
    }
}

pub const SUBCOMMANDS: &[(&str, &str)] = &[
    ("extract", "WAV manifest to MELF features and a feature manifest"),
    ("toygen", "generate the synthetic noisy/clean toy corpus"),
    ("train", "train the proposed model or the CycleGAN baseline"),
    ("convert", "convert utterances between domains with a checkpoint"),
    ("eval-toy", "score a checkpoint on the toy eval pairs"),
    ("selfcheck", "architecture, AdaIN, gradient and loss-identity checks"),
];

pub fn command() -> Command {
    let mut cmd = Command::new("sda")
        .about("Unpaired speech domain adaptation with disentangled latents")
        .subcommand_required(true)
        .args_override_self(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help(format!("key = value config file (also {ENV_PREFIX}CONFIG)")),
        );
    for d in KEYS {
        cmd = cmd.arg(
            Arg::new(d.key)
                .long(config::flag_name(d.key))
                .value_name("VALUE")
                .global(true)
                .action(ArgAction::Set)
                .help(format!("{} [default: {}]", d.help, if d.default.is_empty() { "none" } else { d.default })),
        );
    }
    for (name, about) in SUBCOMMANDS {
        cmd = cmd.subcommand(Command::new(*name).about(*about));
    }
    cmd
}

fn resolve(m: &ArgMatches) -> sda_core::Result<RunConfig> {
    let file = m
        .get_one::<String>("config")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from));
    let env = RunConfig::env_pairs(std::env::vars())?;
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|d| m.get_one::<String>(d.key).map(|v| (d.key.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(file.as_deref(), env, flags)
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = match resolve(sub) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let res = match name {
        "extract" => commands::extract(&cfg),
        "toygen" => commands::toygen(&cfg),
        "train" => commands::train(&cfg),
        "convert" => commands::convert(&cfg),
        "eval-toy" => commands::eval_toy(&cfg),
        "selfcheck" => commands::selfcheck(&cfg),
        _ => unreachable!("unknown subcommand {name}"),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
