//! `icis` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage or invalid configuration, 3 data or I/O
//! error, 4 numeric failure (divergence, zero-norm vectors, singular systems).

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use icis::Execution;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<icis::Error>() {
        Some(icis::Error::InvalidConfig(_)) => 2,
        Some(e) if e.is_numeric() => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match commands::run(&cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Some errors repeat their source in their own message.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg.push_str(if msg.is_empty() { "" } else { ": " });
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
