//! Microstructure noise: autocovariances, lag order and block noise levels.
//!
//! Noise that is `R`-dependent in observation time produces returns with
//! autocovariances
//!
//! ```text
//! γ_u = 2η_u − η_{u−1} − η_{u+1}        (u ≥ 1, η_{−1} = η_1, η_u = 0 for u > R)
//! ```
//!
//! and the signal contributes nothing at lags `u ≥ 1`. Running the identity
//! downward from `η_{R+1} = η_{R+2} = 0` recovers `η_R, …, η_0` from
//! `γ_1, …, γ_{R+1}` only. The long-run variance is `η = η_0 + 2 Σ_{u≥1} η_u`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{BlockGrid, EstimatorConfig, NoiseCorrection, ObservationSeries, Panel};
use crate::error::{Error, Result};
use crate::inference::normal_quantile;
use crate::lmm::noise_scale;
use crate::spectral::{block_index, sine_ladder};

/// Long-run variance floor as a fraction of the lag-0 return autocovariance.
pub const LONG_RUN_FLOOR: f64 = 1e-4;

/// Estimated noise structure of one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetNoise {
    pub asset_id: String,
    pub lag_order: usize,
    /// `η_0, …, η_R`.
    pub autocovariances: Vec<f64>,
    /// Long-run variance `η`.
    pub long_run: f64,
    /// Set when `long_run` was raised to the floor.
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub assets: Vec<AssetNoise>,
}

impl NoiseProfile {
    pub fn long_run(&self) -> Vec<f64> {
        self.assets.iter().map(|a| a.long_run).collect()
    }

    /// A profile with known long-run variances and no lag structure.
    pub fn from_long_run(ids: &[&str], long_run: &[f64]) -> Self {
        Self {
            assets: ids
                .iter()
                .zip(long_run)
                .map(|(id, &eta)| AssetNoise {
                    asset_id: id.to_string(),
                    lag_order: 0,
                    autocovariances: vec![eta],
                    long_run: eta,
                    floored: false,
                })
                .collect(),
        }
    }
}

/// Diagonal of the estimated noise level matrix on one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockNoiseLevel {
    pub block: usize,
    pub diag: Vec<f64>,
    /// Per asset: the block had fewer than two observations and received
    /// the asset's average level instead.
    pub fallback: Vec<bool>,
    /// Noise variance of each statistic `S_jk` (row `j−1`, column asset),
    /// when computed frequency by frequency.
    pub frequency: Option<DMatrix<f64>>,
}

impl BlockNoiseLevel {
    /// Noise variance of asset `p`'s statistic at frequency `j`: the exact
    /// value when available, `c_j H_k` otherwise.
    #[inline]
    pub fn variance(&self, j: usize, h: f64, p: usize) -> f64 {
        match &self.frequency {
            Some(f) if j <= f.nrows() => f[(j - 1, p)],
            _ => noise_scale(j, h) * self.diag[p],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseOptions {
    pub r_max: usize,
    pub alpha: f64,
    /// Subtract a coarse-grid realized variance share from the lag-0
    /// autocovariance before it enters the lag test and the floor.
    pub signal_correction: bool,
}

impl From<&EstimatorConfig> for NoiseOptions {
    fn from(config: &EstimatorConfig) -> Self {
        Self {
            r_max: config.noise_lag_max,
            alpha: config.significance_alpha,
            signal_correction: false,
        }
    }
}

impl Default for NoiseOptions {
    fn default() -> Self {
        Self {
            r_max: 15,
            alpha: 0.05,
            signal_correction: false,
        }
    }
}

fn autocov(r: &[f64], u: usize) -> f64 {
    let terms = r.len() - u;
    r.iter().zip(&r[u..]).map(|(a, b)| a * b).sum::<f64>() / terms as f64
}

/// Sample autocovariance of the returns at lag `u`, without demeaning.
pub fn return_autocovariance(series: &ObservationSeries, u: usize) -> Result<f64> {
    if series.len() <= u + 1 {
        return Err(Error::TooShort {
            asset: series.asset_id.clone(),
            needed: u + 1,
            got: series.len(),
        });
    }
    Ok(autocov(&series.returns(), u))
}

fn check_length(series: &ObservationSeries, r: usize) -> Result<()> {
    if series.len() <= 2 * r + 2 {
        return Err(Error::TooShort {
            asset: series.asset_id.clone(),
            needed: 2 * r + 2,
            got: series.len(),
        });
    }
    Ok(())
}

/// Lag-0 autocovariance, optionally net of a coarse realized variance share.
fn lag0(series: &ObservationSeries, returns: &[f64], signal_correction: bool) -> f64 {
    let g0 = autocov(returns, 0);
    if !signal_correction {
        return g0;
    }
    // roughly five-minute sampling of a 6.5 hour session
    let step = (returns.len() / 78).max(1);
    let y = series.log_prices();
    let rv: f64 = y
        .iter()
        .step_by(step)
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .sum();
    (g0 - rv / returns.len() as f64).max(0.5 * g0)
}

/// Noise autocovariances `η_0..η_R` and long-run variance for lag order `R`.
pub fn estimate_noise(series: &ObservationSeries, lag_order: usize) -> Result<AssetNoise> {
    estimate_noise_with(series, lag_order, false)
}

fn estimate_noise_with(
    series: &ObservationSeries,
    lag_order: usize,
    signal_correction: bool,
) -> Result<AssetNoise> {
    check_length(series, lag_order)?;
    let r = series.returns();
    let gamma: Vec<f64> = (1..=lag_order + 1).map(|u| autocov(&r, u)).collect();
    let g0 = lag0(series, &r, signal_correction);

    // eta[u] for u = 0..=R+2, the last two pinned at zero
    let mut eta = vec![0.0; lag_order + 3];
    for u in (0..=lag_order).rev() {
        eta[u] = 2.0 * eta[u + 1] - eta[u + 2] - gamma[u];
    }
    eta.truncate(lag_order + 1);

    if eta[0] <= 1e-12 * g0 {
        return Err(Error::Numerical(format!(
            "asset `{}`: noise variance estimate {:e} is not positive at lag order {lag_order}; \
             try a smaller lag order",
            series.asset_id, eta[0]
        )));
    }
    let raw = eta[0] + 2.0 * eta[1..].iter().sum::<f64>();
    let floor = LONG_RUN_FLOOR * g0;
    let floored = raw < floor;
    Ok(AssetNoise {
        asset_id: series.asset_id.clone(),
        lag_order,
        autocovariances: eta,
        long_run: if floored { floor } else { raw },
        floored,
    })
}

/// Smallest lag order `R < r_max` whose next return autocovariance, at lag
/// `R+2`, is insignificant; `r_max` when every tested lag is significant.
///
/// Lag `R+2` is compared against its Bartlett band under the MA(`R+1`) null
/// for the returns at level `alpha`. Stepping forward keeps the overshoot
/// probability near `alpha` and, when it happens, almost always a single
/// lag; the long-run variance recovered at order `R` carries weights up to
/// `(R+1)²` on the sample autocovariances, so a distant spurious lag would
/// be far costlier than a near one.
pub fn select_lag_order(series: &ObservationSeries, r_max: usize, alpha: f64) -> Result<usize> {
    select_lag_order_with(series, r_max, alpha, false)
}

fn select_lag_order_with(
    series: &ObservationSeries,
    r_max: usize,
    alpha: f64,
    signal_correction: bool,
) -> Result<usize> {
    check_length(series, r_max)?;
    let r = series.returns();
    let n = r.len() as f64;
    let g0 = lag0(series, &r, signal_correction);
    if g0 <= 0.0 {
        return Ok(0);
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    // bartlett = 1 + 2 Σ_{v=1}^{lag+1} ρ_v²
    let mut bartlett = 1.0;
    for lag in 0..r_max {
        bartlett += 2.0 * (autocov(&r, lag + 1) / g0).powi(2);
        if autocov(&r, lag + 2).abs() <= z * (g0 * g0 * bartlett / n).sqrt() {
            return Ok(lag);
        }
    }
    Ok(r_max)
}

/// Lag selection followed by estimation, stepping the order down if the
/// recovery at the selected order is degenerate.
pub fn estimate_asset_noise(series: &ObservationSeries, options: &NoiseOptions) -> Result<AssetNoise> {
    let feasible = series.len().saturating_sub(3) / 2;
    let r_max = options.r_max.min(feasible);
    let selected = select_lag_order_with(series, r_max, options.alpha, options.signal_correction)?;
    let mut last_err = None;
    for lag in (0..=selected).rev() {
        match estimate_noise_with(series, lag, options.signal_correction) {
            Ok(est) => return Ok(est),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one lag order is tried"))
}

pub fn estimate_profile(panel: &Panel, options: &NoiseOptions) -> Result<NoiseProfile> {
    let assets = panel
        .series()
        .iter()
        .map(|s| estimate_asset_noise(s, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseProfile { assets })
}

/// Per-block noise levels `H_k = (η_p/h) Σ_{kh ≤ t_i ≤ (k+1)h} w_i²`.
///
/// `w_i` is the centred spacing, or the adjacent spacing under
/// [`NoiseCorrection::Adjacent`]. Under [`NoiseCorrection::Exact`] the exact
/// noise variances of the statistics at frequencies `1..=j_count` are
/// attached as well.
pub fn block_noise_levels(
    panel: &Panel,
    grid: &BlockGrid,
    profile: &NoiseProfile,
    correction: NoiseCorrection,
    j_count: usize,
) -> Result<Vec<BlockNoiseLevel>> {
    let d = panel.dim();
    if profile.assets.len() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: profile.assets.len(),
        });
    }
    let nb = grid.num_blocks;
    let h = grid.h;
    let exact = correction == NoiseCorrection::Exact;
    let mut levels: Vec<BlockNoiseLevel> = (0..nb)
        .map(|k| BlockNoiseLevel {
            block: k,
            diag: vec![0.0; d],
            fallback: vec![false; d],
            frequency: exact.then(|| DMatrix::zeros(j_count, d)),
        })
        .collect();

    for (p, series) in panel.series().iter().enumerate() {
        let asset = &profile.assets[p];
        let eta = asset.long_run;
        let t = series.times();
        let n = t.len();
        let weight = |i: usize| match correction {
            NoiseCorrection::Adjacent if i > 0 => t[i] - t[i - 1],
            NoiseCorrection::Adjacent => 0.0,
            _ => 0.5 * (t[(i + 1).min(n - 1)] - t[i.saturating_sub(1)]),
        };
        let mut sums = vec![0.0; nb];
        let mut obs = vec![0usize; nb];
        for i in 0..n {
            let kf = (t[i] / h).floor();
            let k = (kf.max(0.0) as usize).min(nb - 1);
            // a point on a block boundary belongs to both closed blocks
            let also_prev = k > 0 && t[i] == k as f64 * h;
            for kk in [Some(k), also_prev.then(|| k - 1)].into_iter().flatten() {
                obs[kk] += 1;
                sums[kk] += weight(i).powi(2);
            }
        }
        let entry = |k: usize| eta / h * sums[k];
        let good: Vec<usize> = (0..nb).filter(|&k| obs[k] >= 2).collect();
        let fallback_value = if good.is_empty() {
            (0..nb).map(entry).sum::<f64>() / nb as f64
        } else {
            good.iter().map(|&k| entry(k)).sum::<f64>() / good.len() as f64
        };
        for k in 0..nb {
            if obs[k] >= 2 {
                levels[k].diag[p] = entry(k);
            } else {
                levels[k].diag[p] = fallback_value;
                levels[k].fallback[p] = true;
            }
        }

        if exact {
            let acov: Vec<f64> = if asset.floored || asset.autocovariances.is_empty() {
                vec![eta]
            } else {
                asset.autocovariances.clone()
            };
            let exact_values = frequency_noise(series, grid, &acov, j_count);
            for (k, level) in levels.iter_mut().enumerate() {
                let f = level.frequency.as_mut().expect("allocated above");
                for j in 1..=j_count {
                    f[(j - 1, p)] = match (&exact_values[k], level.fallback[p]) {
                        (Some(v), false) => v[j - 1],
                        _ => noise_scale(j, h) * level.diag[p],
                    };
                }
            }
        }
    }
    Ok(levels)
}

/// Exact noise variance of one asset's statistics, per block and frequency.
///
/// The noise term at observation `i` enters `S_jk` with coefficient
/// `b_i = a_i − a_{i+1}`, `a_i = √(2/h) sin(jπ(m_i − kh)/h)` for a return with
/// midpoint `m_i` in block `k` and zero otherwise; its variance is
/// `Σ_u η_u Σ_i b_i b_{i+u}` summed over lags `−R..=R`.
fn frequency_noise(series: &ObservationSeries, grid: &BlockGrid, acov: &[f64], j_count: usize) -> Vec<Option<Vec<f64>>> {
    let h = grid.h;
    let nb = grid.num_blocks;
    let scale = (2.0 / h).sqrt();
    let t = series.times();
    let mut out = vec![None; nb];
    // returns are indexed by their right endpoint 1..n−1 and sorted by midpoint
    let block_of = |i: usize| block_index(0.5 * (t[i - 1] + t[i]), h);
    let mut i = 1;
    while i < t.len() {
        let k = block_of(i);
        let mut end = i;
        while end + 1 < t.len() && block_of(end + 1) == k {
            end += 1;
        }
        if k >= 0 && (k as usize) < nb {
            let k = k as usize;
            // observations i−1..=end carry noise into the block's returns
            let len = end - i + 2;
            let mut b = vec![0.0; len * j_count];
            let mut sines = vec![0.0; j_count];
            for r in i..=end {
                let mid = 0.5 * (t[r - 1] + t[r]);
                sine_ladder(std::f64::consts::PI * (mid - k as f64 * h) / h, &mut sines);
                // return r adds +a to observation r and −a to observation r−1
                let hi = (r - (i - 1)) * j_count;
                let lo = hi - j_count;
                for (j, s) in sines.iter().enumerate() {
                    b[hi + j] += scale * s;
                    b[lo + j] -= scale * s;
                }
            }
            let mut v = vec![0.0; j_count];
            for (u, &eta_u) in acov.iter().enumerate().take(len) {
                let w = if u == 0 { eta_u } else { 2.0 * eta_u };
                for o in 0..len - u {
                    let (x, y) = (&b[o * j_count..(o + 1) * j_count], &b[(o + u) * j_count..(o + u + 1) * j_count]);
                    for j in 0..j_count {
                        v[j] += w * x[j] * y[j];
                    }
                }
            }
            out[k] = Some(v.into_iter().map(|x| x.max(0.0)).collect());
        }
        i = end + 1;
    }
    out
}
