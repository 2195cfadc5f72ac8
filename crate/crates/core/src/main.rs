use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = bn_sharp::cli::Cli::parse();
    match bn_sharp::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
