//! Command-line experiment runner: reads a JSON config, runs one of the
//! toolkit's computations and writes CSV/JSON/SVG artifacts plus a manifest.

pub mod config;
pub mod run;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use serde_json::json;

pub use run::{run_experiment, Command, Manifest, RunError, RunOptions};

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code of a failure after the config was accepted.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit code of a rejected config or command line.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "placeopt", version, about = "Sensor and actuator placement experiments")]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving the artifacts; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for candidate sweeps.
    #[arg(long, env = "PLACEOPT_THREADS")]
    threads: Option<usize>,
}

/// Parses `args`, runs the experiment and returns the process exit code.
/// Errors are reported as one JSON object on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            // Name the offending flag, e.g. "--threads <THREADS>" becomes "--threads".
            let field = match e.get(clap::error::ContextKind::InvalidArg) {
                Some(clap::error::ContextValue::String(arg)) => arg.split_whitespace().next().unwrap_or("arguments").to_string(),
                _ => "arguments".to_string(),
            };
            let message = e.render().to_string();
            eprintln!("{}", json!({ "error": "config", "field": field, "message": message.trim() }));
            return EXIT_CONFIG;
        }
    };
    if cli.threads == Some(0) {
        eprintln!("{}", json!({ "error": "config", "field": "--threads", "message": "must be at least 1" }));
        return EXIT_CONFIG;
    }
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let opts = RunOptions { command: cli.command, config: cli.config, out: cli.out, seed: cli.seed, threads };
    match run_experiment(&opts) {
        Ok(manifest) => {
            println!("{} artifacts written to {}", manifest.artifacts.len() + 1, opts.out.display());
            EXIT_OK
        }
        Err(RunError::Config(e)) => {
            eprintln!("{}", json!({ "error": "config", "field": e.field, "message": e.message }));
            EXIT_CONFIG
        }
        Err(RunError::Runtime(message)) => {
            eprintln!("{}", json!({ "error": "runtime", "message": message }));
            EXIT_RUNTIME
        }
    }
}
