//! Monte Carlo harness: simulate replications, estimate the spot covariance
//! path under each input configuration and score it against the truth.
//!
//! Replication `r` is simulated on RNG stream `r` of the master seed, so the
//! report does not depend on the number of worker threads.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{decomposition_residual, mifb, mise_c, mise_v, ErrorSums};
use super::{simulate_replication, SimConfig, SimOutput};
use crate::data::{BlockGrid, EstimatorConfig};
use crate::error::{Error, Result};
use crate::lmm::estimator::Estimator;
use crate::noise::{estimate_profile, NoiseOptions, NoiseProfile};

/// An estimated path on the truth grid.
#[derive(Debug, Clone)]
pub struct ScoredPath {
    /// Estimate at every truth time.
    pub values: Vec<DMatrix<f64>>,
    /// Whether every block estimate was PSD before projection.
    pub all_psd: bool,
    pub grid: Option<BlockGrid>,
}

/// One row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub theta_h: f64,
    pub theta_j: f64,
    pub theta_k: f64,
    /// Root metrics in percent.
    pub rmifb: f64,
    pub rmise_c: Option<f64>,
    pub rmise_v: f64,
    /// Percentage of replications whose every block estimate was PSD.
    pub pct_psd: f64,
    /// Replications scored.
    pub reps: usize,
    /// Replications whose estimation failed (excluded from the metrics).
    pub failed: usize,
    pub excluded_cells: usize,
    /// Relative residual of the MIFB decomposition.
    pub identity_residual: f64,
    /// Geometry of the first scored replication.
    pub grid: Option<BlockGrid>,
    #[serde(skip)]
    pub sums: ErrorSums,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub d: usize,
    pub n_target: usize,
    pub reps: usize,
    pub seed: u64,
    /// Variance truncations of the Euler scheme over all replications.
    pub truncations: usize,
    pub rows: Vec<McRow>,
}

impl McReport {
    /// Fixed-width text table in the layout of the published study.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "d = {}, n = {}, M = {}, seed = {}\n{:>8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>8}\n",
            self.d, self.n_target, self.reps, self.seed, "theta_h", "theta_J", "theta_K", "RMIFB", "RMISE_c", "RMISE_v", "%PSD"
        );
        for r in &self.rows {
            let c = r.rmise_c.map_or("-".to_string(), |c| format!("{c:.3}"));
            out.push_str(&format!(
                "{:>8.3} {:>8.3} {:>8.3} {:>10.3} {:>10} {:>10.3} {:>8.3}\n",
                r.theta_h, r.theta_j, r.theta_k, r.rmifb, c, r.rmise_v, r.pct_psd
            ));
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "theta_h", "theta_j", "theta_k", "rmifb", "rmise_c", "rmise_v", "pct_psd", "reps", "failed", "excluded_cells",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            wtr.write_record([
                r.theta_h.to_string(),
                r.theta_j.to_string(),
                r.theta_k.to_string(),
                r.rmifb.to_string(),
                r.rmise_c.map_or(String::new(), |c| c.to_string()),
                r.rmise_v.to_string(),
                r.pct_psd.to_string(),
                r.reps.to_string(),
                r.failed.to_string(),
                r.excluded_cells.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::Input(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// Score the local method of moments path of `config` on a simulated day.
/// The path is piecewise constant over blocks; PSD status is taken before
/// any projection.
pub fn lmm_path(sim: &SimOutput, config: &EstimatorConfig, profile: &NoiseProfile) -> Result<ScoredPath> {
    let est = Estimator::with_profile(&sim.panel, config, profile.clone())?;
    let path = est.path()?;
    let grid = *est.grid();
    let all_psd = path.iter().all(|e| e.raw_is_psd());
    let values = sim
        .truth_times
        .iter()
        .map(|&t| path[grid.block_of(t)].sigma.clone())
        .collect();
    Ok(ScoredPath {
        values,
        all_psd,
        grid: Some(grid),
    })
}

struct RepOutcome {
    truncations: usize,
    cells: Vec<Option<(ErrorSums, bool, Option<BlockGrid>)>>,
}

/// Run `reps` replications of `sim`, scoring each configuration of `grid`
/// with the local method of moments.
pub fn monte_carlo(sim: &SimConfig, grid: &[EstimatorConfig], reps: usize) -> Result<McReport> {
    monte_carlo_with(sim, grid, reps, lmm_path)
}

/// Like [`monte_carlo`] with a custom path estimator.
pub fn monte_carlo_with<F>(sim: &SimConfig, grid: &[EstimatorConfig], reps: usize, estimator: F) -> Result<McReport>
where
    F: Fn(&SimOutput, &EstimatorConfig, &NoiseProfile) -> Result<ScoredPath> + Sync,
{
    if reps == 0 {
        return Err(Error::Config("at least one replication is required".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty input grid".into()));
    }
    sim.validate()?;
    for c in grid {
        c.validate()?;
    }

    let outcomes: Vec<RepOutcome> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<RepOutcome> {
            let out = simulate_replication(sim, rep)?;
            let mut profiles: Vec<(NoiseOptions, Option<NoiseProfile>)> = Vec::new();
            let cells = grid
                .iter()
                .map(|config| {
                    let options = NoiseOptions::from(config);
                    let profile = match profiles.iter().find(|(o, _)| *o == options) {
                        Some((_, p)) => p.clone(),
                        None => {
                            let p = estimate_profile(&out.panel, &options).ok();
                            profiles.push((options, p.clone()));
                            p
                        }
                    }?;
                    let path = estimator(&out, config, &profile).ok()?;
                    let sums = ErrorSums::integrate(&path.values, &out.truth).ok()?;
                    Some((sums, path.all_psd, path.grid))
                })
                .collect();
            Ok(RepOutcome {
                truncations: out.truncations,
                cells,
            })
        })
        .collect::<Result<_>>()?;

    let d = sim.d;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, config)| {
            let mut sums = ErrorSums::default();
            let (mut psd, mut failed) = (0usize, 0usize);
            let mut geometry = None;
            for o in &outcomes {
                match &o.cells[g] {
                    Some((s, all_psd, gr)) => {
                        sums.merge(s);
                        psd += usize::from(*all_psd);
                        geometry = geometry.or(*gr);
                    }
                    None => failed += 1,
                }
            }
            let scored = sums.reps;
            let pct = |x: f64| 100.0 * x.sqrt();
            Ok(McRow {
                theta_h: config.theta_h,
                theta_j: config.theta_j,
                theta_k: config.theta_k,
                rmifb: if scored > 0 { pct(mifb(&sums, d)?) } else { f64::NAN },
                rmise_c: if scored > 0 && d > 1 { Some(pct(mise_c(&sums, d)?)) } else { None },
                rmise_v: if scored > 0 { pct(mise_v(&sums, d)?) } else { f64::NAN },
                pct_psd: if scored > 0 { 100.0 * psd as f64 / scored as f64 } else { f64::NAN },
                reps: scored,
                failed,
                excluded_cells: sums.excluded,
                identity_residual: if scored > 0 { decomposition_residual(&sums, d)? } else { 0.0 },
                grid: geometry,
                sums,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(McReport {
        d,
        n_target: sim.n_target,
        reps,
        seed: sim.seed,
        truncations: outcomes.iter().map(|o| o.truncations).sum(),
        rows,
    })
}
