//! `evaluate`: decomposition, simulation, exact analysis and policy
//! comparison of Bernoulli serial lines from a TOML spec file.
//!
//! Exit codes: 0 success, 1 input error, 2 some case failed numerically.

mod commands;
mod report;
mod spec_file;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flowline::Policy;
use rayon::prelude::*;
use thiserror::Error;

use report::{ReportRow, Status};
use spec_file::{Case, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("line {line}, case {case}: {msg}")]
    Invalid { line: usize, case: String, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Line spec file (TOML)
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Convergence tolerance of the decomposition
    #[arg(long)]
    epsilon: Option<f64>,
    /// Base seed of the simulation
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Simulated periods per replication
    #[arg(long)]
    horizon: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Approximate an EB line by decomposition
    Decompose(RunArgs),
    /// Replicated time-driven simulation under the file's policy
    Simulate(RunArgs),
    /// Exact stationary analysis of the full chain (small lines only)
    Exact(RunArgs),
    /// Decomposition against EB and IB simulation (and exact, when small)
    Compare(RunArgs),
}

#[derive(Debug, Parser)]
#[command(
    name = "evaluate",
    version,
    about = "Performance evaluation of Bernoulli serial lines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

type CaseRunner = fn(&Case) -> ReportRow;

fn run(cli: Cli) -> Result<bool, CliError> {
    let (name, args, per_case, default_cols): (&str, RunArgs, CaseRunner, &[&str]) = match cli.command {
        Command::Decompose(a) => ("decompose", a, commands::decompose_case, commands::DECOMPOSE_COLUMNS),
        Command::Simulate(a) => ("simulate", a, commands::simulate_case, commands::SIMULATE_COLUMNS),
        Command::Exact(a) => ("exact", a, commands::exact_case, commands::EXACT_COLUMNS),
        Command::Compare(a) => ("compare", a, commands::compare_case, commands::COMPARE_COLUMNS),
    };
    let overrides = Overrides {
        epsilon: args.epsilon,
        seed: args.seed,
        replications: args.replications,
        horizon: args.horizon,
    };
    let cases = spec_file::load(&args.spec, &overrides)?;
    if name == "decompose" {
        if let Some(c) = cases.iter().find(|c| c.spec.policy() == Policy::Ib) {
            return Err(CliError::Usage(format!(
                "case {}: decomposition requires EB policy",
                c.name
            )));
        }
    }

    let rows: Vec<ReportRow> = cases.par_iter().map(per_case).collect();

    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(File::create(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    match args.format {
        Format::Csv => report::write_csv(&mut sink, &rows, default_cols)?,
        Format::Json => report::write_json(&mut sink, name, &rows)?,
    }
    sink.flush().map_err(|e| CliError::Io {
        path: "output".into(),
        source: e,
    })?;
    for r in rows.iter().filter(|r| r.status != Status::Ok) {
        eprintln!(
            "case {}: {}",
            r.case,
            r.message.as_deref().unwrap_or("numerical failure")
        );
    }
    Ok(rows.iter().all(|r| r.status == Status::Ok))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
