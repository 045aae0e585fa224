mod cli;

use std::process::ExitCode;

use clap::Parser;
use simulstream::Error;

use cli::args::{Cli, Command};

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(
            Error::Validation(_)
            | Error::Capacity { .. }
            | Error::DegenerateInput(_)
            | Error::UndefinedMetric(_)
            | Error::InvalidContext(_)
            | Error::Trace(_),
        ) => 3,
        Some(Error::Io(_)) => 4,
        Some(Error::ReplayMiss(_)) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cli::commands::synth(a),
        Command::Run(a) => cli::commands::run(a),
        Command::TrainTdm(a) => cli::commands::train(a),
        Command::Compare(a) => cli::commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
