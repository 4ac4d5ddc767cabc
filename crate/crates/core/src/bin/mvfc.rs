//! `mvfc` — batch runner, sweeps, and self-checks for the trust-weighted
//! reserve controller.

use std::process::ExitCode;

use clap::Parser;
use mvf_composer::cli::{dispatch, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
