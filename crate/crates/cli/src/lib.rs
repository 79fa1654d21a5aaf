//! Command-line front end for `depthpose`: line-delimited record formats,
//! configuration files and the `estimate`, `eval`, `bench` and `generate`
//! subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod format;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use depthpose::Mode;

use crate::commands::GenerateSpec;
use crate::error::CliResult;
use crate::settings::{load_toml, BenchSpec, EstimateFlags, EstimateSettings, ExperimentKind};

#[derive(Debug, Parser)]
#[command(name = "depthpose", version, about = "Relative pose from matches and affine-ambiguous depth priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the relative pose of every pair in a pair-record file
    Estimate {
        /// TOML file with any of the flag settings; flags take precedence
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: EstimateFlags,
    },
    /// Compare result records against ground truth
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the summary to this file
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a synthetic experiment
    Bench {
        /// TOML benchmark spec
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum)]
        experiment: Option<ExperimentKind>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Print the resolved spec and exit
        #[arg(long)]
        dry_run: bool,
    },
    /// Write synthetic pairs and their ground truth
    Generate {
        /// TOML file with `count`, `output`, `gt` and a `[scene]` table
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate { config, flags } => {
            let mut settings: EstimateSettings = match &config {
                Some(p) => load_toml(p)?,
                None => EstimateSettings::default(),
            };
            settings.apply(flags);
            commands::cmd_estimate(&settings)
        }
        Command::Eval { results, gt, output } => commands::cmd_eval(&results, &gt, output.as_deref()),
        Command::Bench { spec, experiment, output_dir, trials, threads, dry_run } => {
            let mut s: BenchSpec = load_toml(&spec)?;
            s.experiment = experiment.or(s.experiment);
            s.output_dir = output_dir.or(s.output_dir);
            s.trials = trials.unwrap_or(s.trials);
            s.threads = threads.unwrap_or(s.threads);
            commands::cmd_bench(&s, dry_run)
        }
        Command::Generate { spec, count, seed, mode, output, gt } => {
            let mut s: GenerateSpec = match &spec {
                Some(p) => load_toml(p)?,
                None => GenerateSpec::default(),
            };
            s.count = count.unwrap_or(s.count);
            s.scene.seed = seed.unwrap_or(s.scene.seed);
            s.scene.mode = mode.unwrap_or(s.scene.mode);
            s.output = output.or(s.output);
            s.gt = gt.or(s.gt);
            commands::cmd_generate(&s)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
