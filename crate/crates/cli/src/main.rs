//! `pass-pilot`: train a latent world model of the optimizer, then use it
//! to pick pass sequences. Subcommands cover feature extraction, training,
//! single-program optimization, corpus evaluation, random search, and the
//! brute-force oracle.
//!
//! Exit codes: 0 success, 1 training or internal failure, 2 parse failure
//! (IR, config, core-set, or checkpoint file), 3 checkpoint/config
//! mismatch.

mod bundle;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pass-pilot", version, about = "Learned LLVM pass ordering")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the 56 observation counters of an IR module as CSV.
    Features {
        /// Path to a textual LLVM IR file.
        ir_path: PathBuf,
    },
    /// Train world model and actor-critic per a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from an existing checkpoint (step counter carries on).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimize one program with a trained checkpoint.
    Optimize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// `synthetic:<index>` or a path to an IR file.
        #[arg(long)]
        input: String,
        /// `rollout`, `guided:<seconds>`, or `coreset:<file>`.
        #[arg(long, default_value = "rollout")]
        mode: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint over the corpus and write a report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// `rollout`, `guided:<seconds>`, or `coreset:<file>`.
        #[arg(long, default_value = "rollout")]
        mode: String,
        /// `test`, `validation`, `train`, or `all`.
        #[arg(long, default_value = "test")]
        split: String,
        /// Adds a budget-matched comparison, e.g. `random-search:100`.
        #[arg(long)]
        baseline: Option<String>,
        /// Parallel environment instances.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Report zeros in the wall-time column (for golden files).
        #[arg(long)]
        zero_timing: bool,
        /// Report directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random search baseline on one program.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// `synthetic:<index>` or a path to an IR file.
        #[arg(long)]
        input: String,
        /// `<n>p` for pass applications or `<n>s` for seconds.
        #[arg(long)]
        budget: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Exhaustive enumeration up to a length bound (synthetic backend).
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// `synthetic:<index>` or a path to an IR file.
        #[arg(long)]
        input: String,
        #[arg(long)]
        max_len: usize,
        /// Enumeration size guard.
        #[arg(long, default_value_t = pass_pilot_core::eval::ORACLE_DEFAULT_CAP)]
        cap: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Features { ir_path } => run::features(&ir_path),
        Cmd::Train {
            config,
            resume,
            seed,
        } => run::train(&config, resume.as_deref(), seed),
        Cmd::Optimize {
            checkpoint,
            config,
            input,
            mode,
            seed,
        } => run::optimize(&checkpoint, &config, &input, &mode, seed),
        Cmd::Eval {
            checkpoint,
            config,
            mode,
            split,
            baseline,
            workers,
            seed,
            zero_timing,
            out,
        } => run::eval(run::EvalArgs {
            checkpoint,
            config,
            mode,
            split,
            baseline,
            workers,
            seed,
            zero_timing,
            out,
        }),
        Cmd::Search {
            config,
            input,
            budget,
            seed,
        } => run::search(&config, &input, &budget, seed),
        Cmd::Oracle {
            config,
            input,
            max_len,
            cap,
        } => run::oracle(&config, &input, max_len, cap),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
