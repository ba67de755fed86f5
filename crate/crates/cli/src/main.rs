//! `earn`: evolutionary search for Pareto-optimal ensembles of pretrained
//! classifiers.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{enumerate, eval, pool, report, search};

#[derive(Parser, Debug)]
#[command(name = "earn", version, about = "Search, enumerate and compare ensembles of pretrained classifiers")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random choice (overrides config files).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for evaluation; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Output file or directory, depending on the command.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pool management: validate, synthesize, split, import.
    #[command(subcommand)]
    Pool(pool::PoolCommand),
    /// Run the evolutionary search.
    Search(search::SearchArgs),
    /// Evaluate one serialized ensemble.
    Eval(eval::EvalArgs),
    /// Exhaustively evaluate mergers or two-stage chains.
    Enumerate(enumerate::EnumerateArgs),
    /// Compare ensembles against the most accurate single model.
    Report(report::ReportArgs),
}

/// Errors caused by the invocation rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    let data = err.chain().any(|e| {
        e.is::<earn_core::Error>()
            || e.is::<std::io::Error>()
            || e.is::<serde_json::Error>()
            || e.is::<csv::Error>()
    });
    if data {
        2
    } else {
        3
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    if g.jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    match cli.command {
        Command::Pool(cmd) => pool::run(cmd, g),
        Command::Search(args) => search::run(args, g),
        Command::Eval(args) => eval::run(args, g),
        Command::Enumerate(args) => enumerate::run(args, g),
        Command::Report(args) => report::run(args, g),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            let mut msg = err.to_string();
            for cause in err.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg.push_str(": ");
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&err))
        }
        Err(_) => ExitCode::from(3),
    }
}
