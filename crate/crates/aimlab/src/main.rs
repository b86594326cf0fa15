use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = aimlab::cli::Cli::parse();
    match aimlab::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
