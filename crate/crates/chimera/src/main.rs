use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = chimera::cli::Cli::parse();
    match chimera::cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
