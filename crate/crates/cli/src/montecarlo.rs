//! `montecarlo`: score the estimator over a grid of tuning constants.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use spotlmm::sim::montecarlo::monte_carlo;
use spotlmm::EstimatorConfig;

use crate::error::{CliError, CliResult};
use crate::manifest::{now, RunManifest, MANIFEST_FILE};
use crate::output::OutputSet;
use crate::simulate::SimArgs;
use crate::{estimator_config, Corrections, NoiseTuning, OnOff, SideArg};

/// Rows of the published input grid: the optimum and its one-at-a-time
/// variations.
pub const DEFAULT_GRID: [(f64, f64, f64); 7] = [
    (0.15, 6.0, 2.0),
    (0.15, 1.0, 2.0),
    (0.15, 10.0, 2.0),
    (0.15, 6.0, 1.2),
    (0.15, 6.0, 4.8),
    (0.025, 6.0, 2.0),
    (0.25, 6.0, 2.0),
];

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// CSV with columns `theta_h,theta_j,theta_k` (default: the built-in grid).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Replications.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 5)]
    pub j_pre: usize,
    /// Score projected estimates (PSD statistics are always pre-projection).
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    pub psd: OnOff,
    #[command(flatten)]
    pub noise: NoiseTuning,
    #[command(flatten)]
    pub corrections: Corrections,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct GridRow {
    theta_h: f64,
    theta_j: f64,
    theta_k: f64,
}

fn read_grid(path: &PathBuf) -> CliResult<Vec<(f64, f64, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let rows = rdr
        .deserialize::<GridRow>()
        .map(|r| r.map(|g| (g.theta_h, g.theta_j, g.theta_k)))
        .collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: empty grid", path.display())));
    }
    Ok(rows)
}

pub fn run(args: MonteCarloArgs) -> CliResult<()> {
    let started = now();
    let sim = args.sim.to_config()?;
    let thetas = match &args.grid {
        Some(p) => read_grid(p)?,
        None => DEFAULT_GRID.to_vec(),
    };
    let grid = thetas
        .iter()
        .map(|&t| estimator_config(t, args.delta, args.j_pre, SideArg::Two, args.psd, &args.noise, &args.corrections))
        .collect::<CliResult<Vec<EstimatorConfig>>>()?;
    let report = monte_carlo(&sim, &grid, args.reps)?;

    let mut outputs = OutputSet::new();
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    outputs.add("report.csv", csv);
    let table = report.to_table();
    outputs.add("report.txt", table.clone().into_bytes());
    let derived = serde_json::json!({
        "sim_config": sim,
        "rows": report.rows,
        "variance_truncations": report.truncations,
    });
    outputs.add(MANIFEST_FILE, RunManifest::new("montecarlo", started, &args, &derived)?.to_bytes()?);
    outputs.commit(&args.out)?;
    print!("{table}");
    Ok(())
}
