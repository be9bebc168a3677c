use std::process::ExitCode;

use clap::Parser;
use subsetgrad_cli::args::Cli;
use subsetgrad_cli::error::EXIT_FLAG;
use subsetgrad_cli::{configure_threads, dispatch};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FLAG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match configure_threads().and_then(|_| dispatch(&cli)) {
        Ok(w) => {
            for f in &w.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
