use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = shelfmap::cli::Cli::parse();
    match shelfmap::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shelfmap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
