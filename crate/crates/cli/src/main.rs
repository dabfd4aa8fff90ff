use std::process::ExitCode;

use clap::Parser;
use hsdrive_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hsdrive: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
