//! `obk`: acquisition server, comment tools, queries and administration
//! for the run bookkeeper.

mod acquire;
mod admin;
mod bench;
mod comment;
mod output;
mod query;
mod serve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obk_core::model::Timestamp;
use obk_core::storage::{OpenOptions, Repository};

#[derive(Parser)]
#[command(name = "obk", version, about = "Run bookkeeping: acquisition, comments, queries and administration")]
struct Cli {
    /// Log filter, e.g. `info` or `obk_core=debug`.
    #[arg(long, global = true, env = "OBK_LOG", default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the acquisition server that stores published run data.
    Acquire(acquire::Args),
    /// Add a comment to a run, directly (offline) or through the service (online).
    Comment(comment::Args),
    /// Search runs and IS parameters.
    #[command(subcommand)]
    Query(query::Command),
    /// Repository and account administration.
    #[command(subcommand)]
    Admin(admin::Command),
    /// Serve the HTTP API.
    Serve(serve::Args),
    /// Storage benchmarks.
    #[command(subcommand)]
    Bench(bench::Command),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Acquire(a) => acquire::run(a),
        Command::Comment(a) => comment::run(a),
        Command::Query(c) => query::run(c),
        Command::Admin(c) => admin::run(c),
        Command::Serve(a) => serve::run(a),
        Command::Bench(c) => bench::run(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("obk: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub(crate) fn open_repo(root: &std::path::Path, writable: bool) -> anyhow::Result<Repository> {
    Ok(Repository::open(
        root,
        OpenOptions {
            writable,
            durable: false,
        },
    )?)
}

pub(crate) fn parse_timestamp(s: &str) -> Result<Timestamp, String> {
    s.parse::<Timestamp>().map_err(|e| e.to_string())
}
