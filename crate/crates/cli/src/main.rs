mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use cachefed::Error;

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Divergence { .. } => 4,
        _ => 2,
    }
}

fn thread_pool() -> Result<(), Error> {
    let threads = match std::env::var("CACHEFED_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Invalid(format!("CACHEFED_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = thread_pool().and_then(|()| match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Train(a) => commands::train(a),
        Command::Convergence(a) => commands::convergence(a),
        Command::Partition(a) => commands::partition(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
