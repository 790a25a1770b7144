//! Command-line front end: bounds, synthetic data, backtests and analyses.
//!
//! Every command is deterministic given its inputs. Exit codes are 0 on
//! success, 1 for invalid arguments or configuration, and 2 when input
//! data cannot be used.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    /// Wraps a library error, classifying parameter problems as validation
    /// failures and everything else as data failures.
    pub fn from_core(context: impl std::fmt::Display, e: perpfund::Error) -> Self {
        use perpfund::Error as E;
        let msg = format!("{context}: {e}");
        match e {
            E::InvalidParameter(_) | E::BoundArgumentNonPositive(_) => CliError::Validation(msg),
            _ => CliError::Data(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "perpfund", version, about = "Perpetual futures no-arbitrage bounds, backtests and analyses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the trading-cost bounds on the annualized deviation.
    Bounds(BoundsArgs),
    /// Generate a synthetic hourly market and its funding schedule.
    Synth(SynthArgs),
    /// Run the configured strategy on every configured asset and tier.
    Backtest(BacktestArgs),
    /// Deviation series, correlations, regressions and event studies.
    Analyze(ConfigArgs),
    /// Funding-time event study and capture trade on minute data.
    EventStudy(EventStudyArgs),
    /// Score every threshold pair on the window before a given time.
    GridSearch(GridSearchArgs),
}

#[derive(Debug, Args)]
pub struct FeeArgs {
    /// none, low, medium, high, or custom (with --spot-fee and --futures-fee).
    #[arg(long, default_value = "none")]
    pub tier: String,
    /// Spot maker fee for the custom tier, as a fraction.
    #[arg(long)]
    pub spot_fee: Option<f64>,
    /// Futures maker fee for the custom tier, as a fraction.
    #[arg(long)]
    pub futures_fee: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub fees: FeeArgs,
    /// Annual interest rate.
    #[arg(long, default_value_t = 0.1095, allow_negative_numbers = true)]
    pub r: f64,
    /// Funding payments' mean-reversion intensity, per year.
    #[arg(long, default_value_t = 1095.0)]
    pub kappa: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving `<asset>_prices.csv` and `<asset>_funding.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub asset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hours: Option<usize>,
    /// First timestamp, ISO-8601 UTC or epoch seconds, on the hour.
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long)]
    pub spot_start: Option<f64>,
    #[arg(long)]
    pub spot_vol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub spot_drift: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gap_mean: Option<f64>,
    #[arg(long)]
    pub gap_reversion: Option<f64>,
    #[arg(long)]
    pub gap_vol: Option<f64>,
    #[arg(long)]
    pub gap_bound: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gap_init: Option<f64>,
    /// Interest rate used to derive funding from the gap.
    #[arg(long, default_value_t = 0.1095, allow_negative_numbers = true)]
    pub r: f64,
    #[arg(long, default_value_t = 1095.0)]
    pub kappa: f64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run only this tier instead of the configured ones.
    #[arg(long)]
    pub tier: Option<String>,
}

#[derive(Debug, Args)]
pub struct EventStudyArgs {
    /// Minute `timestamp,futures_price,spot_price` CSV.
    #[arg(long)]
    pub minutes: PathBuf,
    /// `timestamp,funding_rate` CSV.
    #[arg(long)]
    pub funding: PathBuf,
    #[arg(long, default_value = "ASSET")]
    pub asset: String,
    /// Event-study curves are written here.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fees: FeeArgs,
}

#[derive(Debug, Args)]
pub struct GridSearchArgs {
    /// Hourly `timestamp,futures_price,spot_price` CSV.
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub funding: PathBuf,
    #[arg(long, default_value = "ASSET")]
    pub asset: String,
    /// Selection time; the window is the lookback before it.
    #[arg(long)]
    pub as_of: String,
    #[arg(long, default_value_t = 6)]
    pub lookback_months: u32,
    #[arg(long, default_value_t = 0.0)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub grid_step: f64,
    /// unrestricted or long_spot_only.
    #[arg(long, default_value = "unrestricted")]
    pub restriction: String,
    /// Every scored pair is written here as `upper,lower,sharpe`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fees: FeeArgs,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let out = match cli.command {
        Command::Bounds(a) => commands::bounds(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Backtest(a) => commands::backtest(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::EventStudy(a) => commands::event_study(&a),
        Command::GridSearch(a) => commands::grid_search(&a),
    };
    match out {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
