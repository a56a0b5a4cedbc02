//! Domain types shared by every stage of the pipeline.

pub mod grid;
pub mod ingest;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One asset's quote revisions on the unit time interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub asset_id: String,
    times: Vec<f64>,
    log_prices: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(asset_id: impl Into<String>, times: Vec<f64>, log_prices: Vec<f64>) -> Result<Self> {
        let asset_id = asset_id.into();
        if times.len() != log_prices.len() {
            return Err(Error::Input(format!(
                "asset `{asset_id}`: {} times but {} prices",
                times.len(),
                log_prices.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::EmptyAsset {
                asset: asset_id,
                count: times.len(),
            });
        }
        if let Some(i) = times.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::Input(format!(
                "asset `{asset_id}`: times not strictly increasing at index {}",
                i + 1
            )));
        }
        if times[0] < 0.0 || times[times.len() - 1] > 1.0 {
            return Err(Error::Input(format!(
                "asset `{asset_id}`: times must lie in [0, 1]"
            )));
        }
        if log_prices.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input(format!(
                "asset `{asset_id}`: non-finite log price"
            )));
        }
        Ok(Self {
            asset_id,
            times,
            log_prices,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_prices(&self) -> &[f64] {
        &self.log_prices
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Log returns `Y_i − Y_{i−1}`, one fewer than observations.
    pub fn returns(&self) -> Vec<f64> {
        self.log_prices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// The prefix with `t ≤ cutoff`, or `None` if fewer than two points remain.
    pub fn truncated(&self, cutoff: f64) -> Option<Self> {
        let end = self.times.partition_point(|&t| t <= cutoff);
        (end >= 2).then(|| Self {
            asset_id: self.asset_id.clone(),
            times: self.times[..end].to_vec(),
            log_prices: self.log_prices[..end].to_vec(),
        })
    }

    /// Same times, prices multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            asset_id: self.asset_id.clone(),
            times: self.times.clone(),
            log_prices: self.log_prices.iter().map(|y| y * c).collect(),
        }
    }
}

/// A cross-section of `d` assets observed on the same trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    series: Vec<ObservationSeries>,
}

impl Panel {
    pub fn new(series: Vec<ObservationSeries>) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Input("panel needs at least one asset".into()));
        }
        Ok(Self { series })
    }

    pub fn series(&self) -> &[ObservationSeries] {
        &self.series
    }

    pub fn dim(&self) -> usize {
        self.series.len()
    }

    /// Observation count of the least liquid asset.
    pub fn n(&self) -> usize {
        self.series.iter().map(ObservationSeries::len).min().unwrap_or(0)
    }

    pub fn asset_ids(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.asset_id.as_str()).collect()
    }

    /// Panel restricted to observations with `t ≤ cutoff`.
    pub fn truncated(&self, cutoff: f64) -> Result<Self> {
        let series = self
            .series
            .iter()
            .map(|s| {
                s.truncated(cutoff).ok_or_else(|| Error::EmptyAsset {
                    asset: s.asset_id.clone(),
                    count: s.times.partition_point(|&t| t <= cutoff),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(series)
    }

    /// Panel with the assets reordered: new asset `i` is old asset `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            series: perm.iter().map(|&i| self.series[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Window centred on the evaluation block.
    TwoSided,
    /// Window ending at the evaluation block.
    OneSided,
}

/// How the noise contribution to the spectral statistics is removed.
///
/// A noise shock at `t_i` reaches the statistics through the two returns on
/// either side of it, so its lever is the centred spacing
/// `w_i = (t_{i+1} − t_{i−1})/2`, not the adjacent spacing `t_i − t_{i−1}`.
/// The two agree on an equidistant grid; under Poisson sampling the adjacent
/// sum of squares is about 4/3 of the centred one. The `c_j H_k` form is a
/// small-`ω_j w_i` expansion of the exact per-frequency noise variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCorrection {
    /// Per-frequency noise variance of each statistic, computed from the
    /// observation times and the estimated noise autocovariances.
    #[default]
    Exact,
    /// `c_j H_k` with `H_k = (η/h) Σ w_i²`.
    Centred,
    /// `c_j H_k` with `H_k = (η/h) Σ (t_i − t_{i−1})²`.
    Adjacent,
}

/// Tuning constants of the estimator.
///
/// Block length, spectral cutoff and window half-width scale with the sample
/// size as `h = θ_h log(n)/√n`, `J = ⌊θ_J log n⌋`, `K = ⌈θ_K n^{1/4−δ}⌉`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub theta_h: f64,
    pub theta_j: f64,
    pub theta_k: f64,
    pub delta: f64,
    /// Number of frequencies averaged by the pre-estimator.
    pub j_pre: usize,
    pub side: Side,
    pub psd_projection: bool,
    /// Largest noise autocorrelation lag considered.
    pub noise_lag_max: usize,
    /// Significance level of the noise lag-order test.
    pub significance_alpha: f64,
    #[serde(default)]
    pub noise_correction: NoiseCorrection,
    /// Divide each moment by the signal overlap of the observation times so
    /// that cross moments stay unbiased under asynchronous sampling.
    #[serde(default = "default_true")]
    pub asynchrony_correction: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            theta_h: 0.175,
            theta_j: 7.0,
            theta_k: 2.0,
            delta: 0.01,
            j_pre: 5,
            side: Side::TwoSided,
            psd_projection: true,
            noise_lag_max: 15,
            significance_alpha: 0.05,
            noise_correction: NoiseCorrection::Exact,
            asynchrony_correction: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_h", self.theta_h),
            ("theta_j", self.theta_j),
            ("theta_k", self.theta_k),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 0.25) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1/4), got {}",
                self.delta
            )));
        }
        if self.j_pre == 0 {
            return Err(Error::Config("j_pre must be at least 1".into()));
        }
        if !(self.significance_alpha > 0.0 && self.significance_alpha < 1.0) {
            return Err(Error::Config(format!(
                "significance_alpha must lie in (0, 1), got {}",
                self.significance_alpha
            )));
        }
        Ok(())
    }

    pub fn with_thetas(mut self, theta_h: f64, theta_j: f64, theta_k: f64) -> Self {
        self.theta_h = theta_h;
        self.theta_j = theta_j;
        self.theta_k = theta_k;
        self
    }
}

/// Block, frequency and window geometry derived from the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockGrid {
    /// Block length on the unit interval.
    pub h: f64,
    pub num_blocks: usize,
    /// Spectral cutoff.
    pub j_max: usize,
    /// Window half-width in blocks.
    pub k_half: usize,
}

impl BlockGrid {
    /// Index of the block containing `t`, with the right end clamped to the
    /// last block.
    pub fn block_of(&self, t: f64) -> usize {
        let b = (t / self.h).floor();
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(self.num_blocks - 1)
        }
    }

    /// Midpoint of block `k`, clamped to the unit interval.
    pub fn block_midpoint(&self, k: usize) -> f64 {
        ((k as f64 + 0.5) * self.h).min(1.0)
    }

    pub fn block_start(&self, k: usize) -> f64 {
        k as f64 * self.h
    }
}
