mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use funcnet::Error;

use args::{Cli, Command};

/// Process exit status for an error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidDomain { .. } | Error::DegenerateMap(_) => 2,
        Error::Data(_) | Error::Checkpoint(_) => 3,
        Error::Divergence { .. } => 4,
        Error::OutOfDomain { .. } | Error::MapUndefined { .. } => 5,
        Error::Io { .. } | Error::Tensor(_) => 1,
    }
}

fn thread_count(flag: usize) -> Result<usize, Error> {
    if flag > 0 {
        return Ok(flag);
    }
    match std::env::var("FUNCNET_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("FUNCNET_THREADS={v:?} is not a thread count"))),
        _ => Ok(0),
    }
}

fn run() -> Result<(), Error> {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let threads = thread_count(cli.threads)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let sub = matches
        .subcommand()
        .map(|(_, m)| m)
        .expect("a subcommand is required");
    match &cli.command {
        Command::Train(a) => commands::train(a, sub),
        Command::Eval(a) => commands::eval(a),
        Command::EvalPlain(a) => commands::eval_plain(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
        Command::Export(a) => commands::export(a),
        Command::Kernels(a) => commands::kernels(a),
        Command::Ablate(a) => commands::ablate_cmd(a, sub),
        Command::Degrade(a) => commands::degrade(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
