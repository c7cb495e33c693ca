mod args;
mod commands;
mod config;
mod error;
mod manifest;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::EXIT_USAGE;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = commands::ensure_dir(&cli.out_dir).and_then(|out| match &cli.command {
        Command::Synth(a) => commands::synth(&out, a),
        Command::Triangulate(a) => commands::triangulate(&out, a),
        Command::Train(a) => commands::train(&out, a),
        Command::Eval(a) => commands::eval(&out, a),
        Command::Infer(a) => commands::infer_cmd(&out, a),
        Command::Ablate(a) => commands::ablate(&out, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
