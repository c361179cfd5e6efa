//! Command-line front end: load instances, run verification suites and
//! emit text or JSON reports.
//!
//! Exit codes are 0 when every verdict passes, 1 when some verdict fails and
//! 2 when the input cannot be read or does not match its schema.

pub mod commands;
pub mod report;
pub mod schema;
pub mod selftest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{FixtureName, WalkMode};
use report::{emit, to_json_bytes, ErrorBody, ErrorReport, Format, Report};
use schema::SchemaError;

#[derive(Debug, Parser)]
#[command(name = "ggc", version, about = "Verify compositions, witnesses and walk-search bounds")]
pub struct Cli {
    /// Verdict tolerance. Defaults depend on the command; selftest ignores it.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for generated instances.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an instance and check witness feasibility.
    Verify { input: PathBuf },
    /// Effective resistance by both routes, flows, and the resistance lemmas.
    Resistance { input: PathBuf },
    /// Optimal weighting scheme of a decision tree.
    Wdt { input: PathBuf },
    /// Walk-search bounds. Without an input, a random concrete instance is
    /// drawn from `--seed`.
    Qwalk {
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = WalkMode::Detection)]
        mode: WalkMode,
        /// Walk lengths for the unified-bound sweep (detection).
        #[arg(long = "t", value_delimiter = ',', default_values_t = [1u32, 2, 3, 4, 5])]
        ts: Vec<u32>,
    },
    /// Build the reflection transducer, verify it and sweep the emulation.
    Transduce {
        input: PathBuf,
        /// Call counts for the emulation sweep.
        #[arg(short = 'K', value_delimiter = ',', default_values_t = [1usize, 4, 16, 64])]
        k: Vec<usize>,
    },
    /// Emit a catalog fixture as a hypergraph document.
    Catalog {
        #[arg(value_enum)]
        name: FixtureName,
        #[arg(long)]
        n: Option<usize>,
        /// Write to this file instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run the full acceptance suite.
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Verify { .. } => "verify",
            Command::Resistance { .. } => "resistance",
            Command::Wdt { .. } => "wdt",
            Command::Qwalk { .. } => "qwalk",
            Command::Transduce { .. } => "transduce",
            Command::Catalog { .. } => "catalog",
            Command::Selftest => "selftest",
        }
    }
}

/// What a run prints and how it exits.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

fn error_kind(e: &SchemaError) -> &'static str {
    match e {
        SchemaError::Io { .. } => "io",
        SchemaError::Parse(_) => "parse",
        SchemaError::Invalid(_) => "schema",
        SchemaError::Library(_) => "instance",
    }
}

/// Exit code and stdout bytes, or an input error.
fn dispatch(cli: &Cli) -> schema::SchemaResult<(i32, Vec<u8>)> {
    let tol = cli.tol;
    let done = |r: Report| (r.exit_code(), emit(&r, cli.format));
    Ok(match &cli.command {
        Command::Verify { input } => done(commands::verify(input, tol)?),
        Command::Resistance { input } => done(commands::resistance(input, tol)?),
        Command::Wdt { input } => done(commands::wdt(input, tol)?),
        Command::Qwalk { input, mode, ts } => done(commands::qwalk(input.as_deref(), *mode, ts, tol, cli.seed)?),
        Command::Transduce { input, k } => done(commands::transduce(input, k, tol)?),
        Command::Catalog { name, n, output } => {
            let doc = commands::catalog_document(*name, *n)?;
            match output {
                Some(p) => {
                    commands::save(&doc, p)?;
                    (0, Vec::new())
                }
                None => (0, to_json_bytes(&doc)),
            }
        }
        Command::Selftest => done(selftest::run_suite(cli.seed)),
    })
}

/// Run a parsed command line.
pub fn run(cli: &Cli) -> Outcome {
    let go = || match dispatch(cli) {
        Ok((code, stdout)) => Outcome {
            code,
            stdout,
            stderr: Vec::new(),
        },
        Err(e) => match cli.format {
            Format::Json => Outcome {
                code: 2,
                stdout: to_json_bytes(&ErrorReport {
                    command: cli.command.name().into(),
                    error: ErrorBody {
                        kind: error_kind(&e).into(),
                        message: e.to_string(),
                    },
                }),
                stderr: Vec::new(),
            },
            Format::Text => Outcome {
                code: 2,
                stdout: Vec::new(),
                stderr: format!("ggc {}: error: {e}\n", cli.command.name()).into_bytes(),
            },
        },
    };
    match cli.jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(go),
            Err(e) => Outcome {
                code: 2,
                stdout: Vec::new(),
                stderr: format!("ggc: cannot start {j} workers: {e}\n").into_bytes(),
            },
        },
        None => go(),
    }
}
