//! Command-line surface for waiting-list randomization analysis.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data validation error,
//! 3 verification failure.

mod commands;
mod ingest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "waitlist-iv",
    version,
    about = "Waiting-list randomization analysis: enumeration checks, the exact \
             oversubscription test, Monte Carlo studies, and CSV data analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InstrumentArg {
    Z,
    V,
    W,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Fe,
    Ipw,
}

#[derive(Subcommand)]
enum Command {
    /// Check every closed-form quantity against exhaustive enumeration
    Verify {
        /// Largest lottery size to enumerate
        #[arg(long)]
        max_n: u64,
        /// Enumeration cap (raise deliberately for large sweeps)
        #[arg(long, default_value_t = waitlist_iv::DEFAULT_ENUMERATION_CAP)]
        cap: u64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
    /// Exact test of oversubscription from an observed last-offer rank
    Test {
        /// Number of applicants
        #[arg(long)]
        n: u64,
        /// Number of seats
        #[arg(long)]
        s: u64,
        /// Observed last-offer rank
        #[arg(long)]
        t: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
    /// Monte Carlo study of the five pooled estimators
    Mc {
        /// JSON config; the built-in study is used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
        /// Seed override (precedence: this flag, then WAITLIST_IV_SEED, then
        /// the config value, then the built-in default)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analyze a CSV of per-student lottery records
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InstrumentArg::W)]
        instrument: InstrumentArg,
        #[arg(long, value_enum, default_value_t = PoolingArg::Ipw)]
        pooling: PoolingArg,
        /// Seats per stratum; inferred from enrollment counts when omitted
        #[arg(long)]
        seats: Option<u64>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Verify { max_n, cap, format } => commands::cmd_verify(max_n, cap, format),
        Command::Test {
            n,
            s,
            t,
            alpha,
            format,
        } => commands::cmd_test(n, s, t, alpha, format),
        Command::Mc {
            config,
            workers,
            format,
            seed,
        } => commands::cmd_mc(config.as_deref(), workers, format, seed),
        Command::Analyze {
            input,
            instrument,
            pooling,
            seats,
            alpha,
            format,
        } => commands::cmd_analyze(&input, instrument, pooling, seats, alpha, format),
    };

    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
