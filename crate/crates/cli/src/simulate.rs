//! `simulate`: one trading day with known spot covariance and noise.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use spotlmm::data::ingest::{panel_to_records, write_prices_csv, DayWindow};
use spotlmm::sim::{simulate_replication, Sampling, SimConfig};

use crate::error::{CliError, CliResult};
use crate::manifest::{now, RunManifest, MANIFEST_FILE};
use crate::output::{csv_bytes, OutputSet};

/// 2024-01-02 14:30 UTC, a 09:30 New York open.
pub const SESSION_OPEN_NS: i64 = 1_704_205_800_000_000_000;
/// Six and a half hours later.
pub const SESSION_CLOSE_NS: i64 = SESSION_OPEN_NS + 23_400_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingArg {
    Poisson,
    Regular,
}

/// Simulation parameters shared by `simulate` and `montecarlo`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimArgs {
    /// Number of assets.
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    /// Expected observations of the least liquid asset.
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Constant covariance: no stochastic volatility, leverage or seasonality.
    #[arg(long)]
    pub constant: bool,
    /// Per-observation noise-to-signal ratio.
    #[arg(long, default_value_t = 1.5)]
    pub noise_to_signal: f64,
    /// MA(1) coefficient of the noise.
    #[arg(long, default_value_t = 0.5)]
    pub ma_coef: f64,
    #[arg(long, value_enum, default_value_t = SamplingArg::Poisson)]
    pub sampling: SamplingArg,
    /// Full simulation config as JSON; overrides every flag above except `--seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl SimArgs {
    pub fn to_config(&self) -> CliResult<SimConfig> {
        let config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                SimConfig {
                    seed: self.seed,
                    ..serde_json::from_str(&text)?
                }
            }
            None => {
                let base = if self.constant {
                    SimConfig::constant(self.d, self.n, self.seed)
                } else {
                    SimConfig {
                        d: self.d,
                        n_target: self.n,
                        seed: self.seed,
                        ..SimConfig::default()
                    }
                };
                SimConfig {
                    noise_to_signal: self.noise_to_signal,
                    ma_coef: self.ma_coef,
                    sampling: match self.sampling {
                        SamplingArg::Poisson => Sampling::Poisson,
                        SamplingArg::Regular => Sampling::Regular,
                    },
                    ..base
                }
            }
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Replication index (selects the RNG stream).
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct NoiseTruthRow {
    asset_id: String,
    loading: f64,
    noise_variance: f64,
    ma_coef: f64,
    eta: f64,
}

pub fn run(args: SimulateArgs) -> CliResult<()> {
    let started = now();
    let config = args.sim.to_config()?;
    let out = simulate_replication(&config, args.rep)?;
    let window = DayWindow::new(SESSION_OPEN_NS, SESSION_CLOSE_NS)?;
    let ids = out.panel.asset_ids();
    let d = ids.len();

    let mut outputs = OutputSet::new();
    let mut prices = Vec::new();
    write_prices_csv(&mut prices, &panel_to_records(&out.panel, window))?;
    outputs.add("prices.csv", prices);
    outputs.add(
        "truth.csv",
        csv_bytes(|w| {
            let mut header = vec!["time".to_string()];
            for p in &ids {
                for q in &ids {
                    header.push(format!("sigma_{p}_{q}"));
                }
            }
            w.write_record(&header)?;
            for (t, s) in out.truth_times.iter().zip(&out.truth) {
                let mut rec = vec![t.to_string()];
                for p in 0..d {
                    for q in 0..d {
                        rec.push(s[(p, q)].to_string());
                    }
                }
                w.write_record(&rec)?;
            }
            Ok(())
        })?,
    );
    outputs.add(
        "noise_truth.csv",
        csv_bytes(|w| {
            for p in 0..d {
                w.serialize(NoiseTruthRow {
                    asset_id: ids[p].to_string(),
                    loading: out.loadings[p],
                    noise_variance: out.noise_variance[p],
                    ma_coef: config.ma_coef,
                    eta: out.eta[p],
                })?;
            }
            Ok(())
        })?,
    );
    let derived = serde_json::json!({
        "session_open_ns": SESSION_OPEN_NS,
        "session_close_ns": SESSION_CLOSE_NS,
        "config": config,
        "observations": out.panel.series().iter().map(|s| s.len()).collect::<Vec<_>>(),
        "variance_truncations": out.truncations,
    });
    outputs.add(MANIFEST_FILE, RunManifest::new("simulate", started, &args, &derived)?.to_bytes()?);
    outputs.commit(&args.out)?;
    eprintln!(
        "simulated {d} assets ({} observations) into {}; session 14:30–21:00 UTC on 2024-01-02",
        out.panel.series().iter().map(|s| s.len()).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}
