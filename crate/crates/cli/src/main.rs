mod args;
mod commands;
mod plot;
mod report;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Audit verdict FAIL.
const EXIT_FAIL: u8 = 1;
/// Usage, data or estimation error.
const EXIT_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Audit(a) => commands::audit(a),
        Command::Influence(a) => commands::influence(a),
        Command::Oracle(a) => commands::oracle(a),
    };
    match result {
        Ok(commands::Status::Success) => ExitCode::SUCCESS,
        Ok(commands::Status::Fail) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
