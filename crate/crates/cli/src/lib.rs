//! Command-line front end for `btex-core`.

pub mod args;
pub mod commands;
pub mod config;

use std::ffi::OsString;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};
use commands::VerificationFailed;
use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_UNREACHABLE_RANK: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_VERIFY_FAILED: i32 = 5;

/// Exit code for an error. Anything unclassified is treated as invalid input.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<VerificationFailed>() {
            return EXIT_VERIFY_FAILED;
        }
        if let Some(e) = cause.downcast_ref::<btex_core::Error>() {
            return match e {
                btex_core::Error::UnreachableRank { .. } => EXIT_UNREACHABLE_RANK,
                btex_core::Error::Diverged { .. } | btex_core::Error::NonFiniteValue(_) => EXIT_NON_FINITE,
                _ => EXIT_INVALID,
            };
        }
    }
    EXIT_INVALID
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.shared.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cli.shared.overlay(&mut cfg);
    cli.command.overlay(&mut cfg);
    match &cli.command {
        Command::Ingest(_) => commands::cmd_ingest(&cfg),
        Command::Select(_) => commands::cmd_select(&cfg),
        Command::Optimize(_) => commands::cmd_optimize(&cfg),
        Command::Verify(_) => commands::cmd_verify(&cfg),
        Command::Ablate(_) => commands::cmd_ablate(&cfg),
        Command::Combine(_) => commands::cmd_combine(&cfg),
        Command::Synth(_) => commands::cmd_synth(&cfg),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
