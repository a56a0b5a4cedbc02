//! Command-line front end: argument types, run manifests and the four
//! subcommands.

pub mod error;
pub mod estimate;
pub mod manifest;
pub mod montecarlo;
pub mod noise;
pub mod output;
pub mod simulate;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spotlmm::data::ingest::{parse_session_bound, read_quotes_csv, DayWindow};
use spotlmm::{ingest_quotes, EstimatorConfig, IngestReport, NoiseCorrection, Panel, Side};

use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "spotlmm", version, about = "Spot covariance estimation from noisy, asynchronous tick data")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "SPOTLMM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate spot covariances, correlations, betas and volatilities with
    /// confidence bands.
    Estimate(estimate::EstimateArgs),
    /// Report the adaptive noise lag order and long-run noise variance per asset.
    Noise(noise::NoiseArgs),
    /// Simulate a trading day with known spot covariance and noise.
    Simulate(simulate::SimulateArgs),
    /// Run the Monte Carlo study over a grid of tuning constants.
    Montecarlo(montecarlo::MonteCarloArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn is_on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideArg {
    Two,
    One,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Two => Side::TwoSided,
            SideArg::One => Side::OneSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Trading session bounds: full timestamps or times of day on the date of
/// the first record. The span of the data is used when absent.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SessionArgs {
    /// Session open, e.g. `09:30` or `2024-01-02T14:30:00Z`.
    #[arg(long)]
    pub open: Option<String>,
    /// Session close, e.g. `16:00`.
    #[arg(long)]
    pub close: Option<String>,
}

/// Tuning constants shared by `estimate` and `noise`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NoiseTuning {
    /// Largest noise autocorrelation lag considered.
    #[arg(long, default_value_t = 15)]
    pub r_max: usize,
    /// Significance level of the lag-order test.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionArg {
    /// Per-frequency noise variance from observation times and noise autocovariances.
    Exact,
    /// `c_j H_k` with centred spacings.
    Centred,
    /// `c_j H_k` with adjacent spacings.
    Adjacent,
}

impl From<CorrectionArg> for NoiseCorrection {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::Exact => NoiseCorrection::Exact,
            CorrectionArg::Centred => NoiseCorrection::Centred,
            CorrectionArg::Adjacent => NoiseCorrection::Adjacent,
        }
    }
}

/// Finite-sample corrections of the moments.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Corrections {
    /// How the noise contribution is removed from each moment.
    #[arg(long, value_enum, default_value_t = CorrectionArg::Exact)]
    pub noise_correction: CorrectionArg,
    /// Rescale moments by the signal overlap of asynchronous observation times.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub asynchrony: OnOff,
}

/// Quotes read from a CSV file and reduced to a panel.
pub struct LoadedPanel {
    pub panel: Panel,
    pub report: IngestReport,
    pub window: DayWindow,
}

pub fn load_panel(input: &Path, session: &SessionArgs) -> CliResult<LoadedPanel> {
    let file = std::fs::File::open(input).map_err(|e| CliError::io(&input.to_path_buf(), e))?;
    let records = read_quotes_csv(std::io::BufReader::new(file))?;
    let first = records
        .first()
        .ok_or_else(|| CliError::Input(format!("{}: no records", input.display())))?
        .timestamp;
    let span = DayWindow::spanning(&records)?;
    let open = session.open.as_deref().map(|s| parse_session_bound(s, first)).transpose()?;
    let close = session.close.as_deref().map(|s| parse_session_bound(s, first)).transpose()?;
    let window = DayWindow::new(open.unwrap_or(span.open), close.unwrap_or(span.close))?;
    let (panel, report) = ingest_quotes(&records, window)?;
    Ok(LoadedPanel { panel, report, window })
}

pub fn estimator_config(
    theta: (f64, f64, f64),
    delta: f64,
    j_pre: usize,
    side: SideArg,
    psd: OnOff,
    noise: &NoiseTuning,
    corrections: &Corrections,
) -> CliResult<EstimatorConfig> {
    let config = EstimatorConfig {
        theta_h: theta.0,
        theta_j: theta.1,
        theta_k: theta.2,
        delta,
        j_pre,
        side: side.into(),
        psd_projection: psd.is_on(),
        noise_lag_max: noise.r_max,
        significance_alpha: noise.alpha,
        noise_correction: corrections.noise_correction.into(),
        asynchrony_correction: corrections.asynchrony.is_on(),
    };
    config.validate()?;
    Ok(config)
}

pub fn require_out(out: &Option<PathBuf>) -> CliResult<&Path> {
    out.as_deref()
        .ok_or_else(|| CliError::Input("an output directory (--out) is required".into()))
}

/// Configure the global thread pool.
pub fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parse arguments, run the subcommand and return the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = init_threads(cli.threads).and_then(|_| match cli.command {
        Command::Estimate(a) => estimate::run(a),
        Command::Noise(a) => noise::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Montecarlo(a) => montecarlo::run(a),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
