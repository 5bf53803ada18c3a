mod args;
mod commands;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// A problem with the invocation rather than with the data; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::SelectM(a) => commands::select_m(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Bench(a) => commands::bench(a),
        Command::Predict(a) => commands::predict(a),
        Command::Generate(a) => commands::generate(a),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on malformed arguments.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
