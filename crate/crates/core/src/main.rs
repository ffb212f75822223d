use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    nwformer::cli::run(nwformer::cli::Cli::parse())
}
