mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Grid(a) => commands::grid(a),
        Command::Generate(a) => commands::generate(a),
        Command::VerifyShrinkage(a) => commands::verify_shrinkage(a),
        Command::Convert(a) => commands::convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            log::debug!("{e:?}");
            e.exit_code()
        }
    }
}
