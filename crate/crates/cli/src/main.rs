use std::process::ExitCode;

use clap::Parser;
use tfcns_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match std::env::var("TFCNS_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                eprintln!("error: TFCNS_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => None,
    };
    let result = match threads {
        Some(n) => tfcns::par::with_threads(n, || run(cli.command)),
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
