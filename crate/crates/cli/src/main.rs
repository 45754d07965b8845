//! `icmvc` command line: dataset generation, single runs, missing-rate
//! sweeps, ablation tables and label evaluation.
//!
//! Exit codes: 0 success, 2 argument or validation error, 3 data error,
//! 4 numerical divergence.

mod args;
mod commands;
mod manifest;
mod pool;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

pub fn exit_code(e: &icmvc::Error) -> u8 {
    use icmvc::Error::*;
    match e {
        Config(_) | Generation(_) => EXIT_VALIDATION,
        Divergence { .. } | Domain(_) => EXIT_DIVERGENCE,
        Dimension { .. } | Contract(_) | DegenerateInput(_) | DegenerateGraph { .. } | Data(_)
        | Parse { .. } | Format(_) | Io { .. } | Json(_) => EXIT_DATA,
    }
}

impl From<icmvc::Error> for Failure {
    fn from(e: icmvc::Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Run(a) => commands::run(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
