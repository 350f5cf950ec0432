// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! `redstuff`: offline encode/decode, scenario runs, fixture checks and
//! claim reports.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or other runtime error |
//! | 2 | usage or configuration error |
//! | 3 | a protocol property or fixture check failed |
//! | 4 | ⊥: the input does not decode to a consistent blob |

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_VIOLATION: u8 = 3;
pub const EXIT_BOTTOM: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "redstuff", version, about = "Two-dimensional erasure-coded blob storage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimensionArg {
    Primary,
    Secondary,
}

#[derive(Debug, clap::Args)]
pub struct Faults {
    /// Faults tolerated; the committee has 3f+1 shards.
    #[arg(long, conflicts_with = "shards")]
    pub f: Option<usize>,
    /// Shard count, of the form 3f+1.
    #[arg(long)]
    pub shards: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a file into sliver pairs and metadata.
    Encode {
        file: PathBuf,
        #[command(flatten)]
        faults: Faults,
        /// Symbol size in bytes (even); the smallest that fits by default.
        #[arg(long)]
        symbol_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "summary")]
        report: ReportFormat,
    },
    /// Rebuild a file from pair files and its metadata.
    Decode {
        /// Pair files written by `encode`.
        #[arg(required = true)]
        pairs: Vec<PathBuf>,
        #[arg(long)]
        metadata: PathBuf,
        /// Which half of each pair to decode from.
        #[arg(long, value_enum, default_value = "secondary")]
        dimension: DimensionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario file or a bundled scenario by name.
    Simulate {
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Runs this many consecutive seeds.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Directory for transcript.jsonl and metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "summary")]
        report: ReportFormat,
    },
    /// Check the library against the golden vectors.
    VerifyFixtures {
        #[arg(long, env = "REDSTUFF_FIXTURES", default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures"))]
        dir: PathBuf,
    },
    /// Overhead, recovery cost and probability checks.
    Report {
        #[arg(long, value_enum, default_value = "summary")]
        report: ReportFormat,
        /// Blob size for the overhead and recovery measurements.
        #[arg(long, default_value_t = 1 << 20)]
        blob_size: usize,
        /// Fault levels for the recovery measurement.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3])]
        recovery_f: Vec<usize>,
        #[arg(long)]
        no_recovery: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    pub fn bottom(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_BOTTOM,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode {
            file,
            faults,
            symbol_size,
            out,
            report,
        } => commands::encode(&file, &faults, symbol_size, &out, report),
        Command::Decode {
            pairs,
            metadata,
            dimension,
            out,
        } => commands::decode(&pairs, &metadata, dimension, &out),
        Command::Simulate {
            scenario,
            seed,
            runs,
            out,
            report,
        } => commands::simulate(&scenario, seed, runs, out.as_deref(), report),
        Command::VerifyFixtures { dir } => commands::verify_fixtures(&dir),
        Command::Report {
            report,
            blob_size,
            recovery_f,
            no_recovery,
            seed,
            out,
        } => commands::report(report, blob_size, recovery_f, no_recovery, seed, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
