mod args;
mod commands;
mod failure;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use failure::{Failure, EXIT_USAGE};

fn run(cli: &Cli) -> Result<serde_json::Value, Failure> {
    resq::set_threads(cli.threads)?;
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::Eval(a) => commands::eval(a),
        Command::Import(a) => commands::import(a),
        Command::Dump(a) => commands::dump(a),
        Command::Bitrate(a) => commands::bitrate(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let message = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", Failure::usage(message).record());
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.record());
            ExitCode::from(f.code as u8)
        }
    }
}
