use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = brinkman_cli::Cli::parse();
    let result = brinkman_cli::parse_args(&cli).and_then(|c| brinkman_cli::run(&c));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if !outcome.warnings.is_empty() {
                eprintln!("{} warning(s)", outcome.warnings.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
