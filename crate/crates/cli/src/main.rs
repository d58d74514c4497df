use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match twoscale::commands::run(twoscale::commands::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
