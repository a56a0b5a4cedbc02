//! Ground-truth synthetic markets.
//!
//! One latent factor with square-root stochastic variance drives `d` assets:
//!
//! ```text
//! dF_t   = m(t) √(θ_v u_t) dW_t
//! du_t   = κ (1 − u_t) dt + ξ √u_t dZ_t,      d⟨W, Z⟩_t = ρ dt
//! dX^p_t = l_p dF_t + m(t) σ_p dB^p_t
//! ```
//!
//! so that `Σ_t = m(t)² (θ_v u_t l lᵀ + diag(σ²))`. `u` is a unit-mean
//! multiplier started in its stationary Gamma law, `m` a Flexible Fourier
//! Form seasonal multiplier normalised to `∫ m² = 1`. Each asset is observed at
//! the arrivals of an independent Poisson process (or on a regular grid) with
//! additive MA(1) noise in observation index.
//!
//! Randomness: a config-level stream (loadings) and one stream per
//! replication, both derived from the master seed with ChaCha8 stream
//! selection, so replication `r` is reproducible in isolation and parallel
//! and serial runs agree.

pub mod metrics;
pub mod montecarlo;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationSeries, Panel};
use crate::error::{Error, Result};
use crate::noise::{AssetNoise, NoiseProfile};

/// Stream reserved for draws that are fixed per configuration.
const CONFIG_STREAM: u64 = u64::MAX;

/// Initial log price of every asset.
const INITIAL_LOG_PRICE: f64 = 4.605_170_185_988_092; // ln 100

/// Deterministic intraday volatility multiplier
/// `m(t) = exp(Σ a_i tⁱ + Σ (c_i cos 2πit + s_i sin 2πit)) / Z`, with `Z` such
/// that `∫₀¹ m(t)² dt = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seasonality {
    /// Coefficients of `t, t², …`.
    pub poly: Vec<f64>,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl Seasonality {
    pub fn flat() -> Self {
        Self {
            poly: Vec::new(),
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    /// U-shape with open and close volatility about twice the daily average.
    pub fn u_shape() -> Self {
        Self {
            poly: vec![-4.5, 4.5],
            cos: vec![0.1],
            sin: Vec::new(),
        }
    }

    fn log_raw(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut tp = 1.0;
        for a in &self.poly {
            tp *= t;
            acc += a * tp;
        }
        for (i, c) in self.cos.iter().enumerate() {
            acc += c * (2.0 * PI * (i + 1) as f64 * t).cos();
        }
        for (i, s) in self.sin.iter().enumerate() {
            acc += s * (2.0 * PI * (i + 1) as f64 * t).sin();
        }
        acc
    }

    /// Normalised multiplier evaluator.
    pub fn multiplier(&self) -> SeasonalMultiplier {
        const NODES: usize = 20_000;
        let mean_sq = (0..NODES)
            .map(|i| (2.0 * self.log_raw((i as f64 + 0.5) / NODES as f64)).exp())
            .sum::<f64>()
            / NODES as f64;
        SeasonalMultiplier {
            shape: self.clone(),
            scale: mean_sq.sqrt().recip(),
        }
    }
}

/// A [`Seasonality`] with its normalising constant.
#[derive(Debug, Clone)]
pub struct SeasonalMultiplier {
    shape: Seasonality,
    scale: f64,
}

impl SeasonalMultiplier {
    pub fn at(&self, t: f64) -> f64 {
        self.scale * self.shape.log_raw(t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent Poisson arrivals per asset.
    Poisson,
    /// `⌈λ_p⌉ + 1` equidistant points including both ends of the day.
    Regular,
}

/// Parameters of a simulated trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub d: usize,
    /// Expected observation count of the least liquid asset.
    pub n_target: usize,
    /// Mean reversion of the variance multiplier, per day.
    pub kappa: f64,
    /// Volatility of the variance multiplier.
    pub vol_of_vol: f64,
    /// Long-run daily factor variance.
    pub factor_variance: f64,
    /// Correlation between factor and variance shocks.
    pub leverage: f64,
    /// Factor loadings; drawn uniformly from `loading_range` when absent.
    pub loadings: Option<Vec<f64>>,
    pub loading_range: (f64, f64),
    /// Idiosyncratic daily volatility relative to `√factor_variance`.
    pub idio_scale: f64,
    pub seasonality: Seasonality,
    /// Per-observation noise variance over per-observation return variance.
    pub noise_to_signal: f64,
    /// Innovation variance of the MA(1) noise per asset; overrides
    /// `noise_to_signal` when present.
    pub noise_variance: Option<Vec<f64>>,
    pub ma_coef: f64,
    /// Expected observation counts per asset; staggered from `n_target/ν`
    /// with `ν` spanning `[liquidity_floor, 1]` when absent.
    pub intensities: Option<Vec<f64>>,
    pub liquidity_floor: f64,
    pub sampling: Sampling,
    /// Euler steps per expected observation of the least liquid asset.
    pub steps_per_obs: usize,
    /// Number of cells of the truth grid.
    pub truth_points: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            d: 5,
            n_target: 20_000,
            kappa: 5.0,
            vol_of_vol: 0.5,
            factor_variance: 0.2 * 0.2 / 252.0,
            leverage: -0.5,
            loadings: None,
            loading_range: (0.6, 1.4),
            idio_scale: 0.6,
            seasonality: Seasonality::u_shape(),
            noise_to_signal: 1.5,
            noise_variance: None,
            ma_coef: 0.5,
            intensities: None,
            liquidity_floor: 0.4,
            sampling: Sampling::Poisson,
            steps_per_obs: 10,
            truth_points: 2000,
            seed: 1,
        }
    }
}

impl SimConfig {
    /// Constant covariance: no stochastic or seasonal volatility.
    pub fn constant(d: usize, n_target: usize, seed: u64) -> Self {
        Self {
            d,
            n_target,
            vol_of_vol: 0.0,
            leverage: 0.0,
            seasonality: Seasonality::flat(),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.n_target < 2 {
            return bad(format!("n_target must be at least 2, got {}", self.n_target));
        }
        if !(self.kappa >= 0.0 && self.vol_of_vol >= 0.0 && self.factor_variance >= 0.0 && self.idio_scale >= 0.0) {
            return bad("volatility parameters must be non-negative".into());
        }
        if self.vol_of_vol > 0.0 && self.kappa <= 0.0 {
            return bad("a stochastic variance multiplier needs positive mean reversion".into());
        }
        if !(-1.0..=1.0).contains(&self.leverage) {
            return bad(format!("leverage must lie in [-1, 1], got {}", self.leverage));
        }
        if !(self.ma_coef > -1.0 && self.ma_coef < 1.0) {
            return bad(format!("MA coefficient must lie in (-1, 1), got {}", self.ma_coef));
        }
        if !(self.noise_to_signal >= 0.0) {
            return bad("noise_to_signal must be non-negative".into());
        }
        if !(self.liquidity_floor > 0.0 && self.liquidity_floor <= 1.0) {
            return bad(format!("liquidity_floor must lie in (0, 1], got {}", self.liquidity_floor));
        }
        if self.loading_range.0 > self.loading_range.1 {
            return bad("empty loading range".into());
        }
        for (name, v) in [
            ("loadings", &self.loadings),
            ("noise_variance", &self.noise_variance),
            ("intensities", &self.intensities),
        ] {
            if let Some(v) = v {
                if v.len() != self.d {
                    return Err(Error::Dimension {
                        expected: self.d,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return bad(format!("{name} must be finite"));
                }
            }
        }
        if let Some(l) = &self.intensities {
            if l.iter().any(|&x| x < 1.0) {
                return bad("intensities must be at least 1".into());
            }
        }
        if let Some(v) = &self.noise_variance {
            if v.iter().any(|&x| x < 0.0) {
                return bad("noise variances must be non-negative".into());
            }
        }
        if self.steps_per_obs == 0 || self.truth_points == 0 {
            return bad("steps_per_obs and truth_points must be positive".into());
        }
        Ok(())
    }

    /// Loadings, drawn from the config-level stream when not given.
    pub fn resolved_loadings(&self) -> Vec<f64> {
        if let Some(l) = &self.loadings {
            return l.clone();
        }
        let mut rng = stream_rng(self.seed, CONFIG_STREAM);
        let (lo, hi) = self.loading_range;
        (0..self.d)
            .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect()
    }

    pub fn resolved_intensities(&self) -> Vec<f64> {
        if let Some(l) = &self.intensities {
            return l.clone();
        }
        let n = self.n_target as f64;
        (0..self.d)
            .map(|p| {
                let nu = if self.d == 1 {
                    1.0
                } else {
                    1.0 - (1.0 - self.liquidity_floor) * p as f64 / (self.d - 1) as f64
                };
                n / nu
            })
            .collect()
    }

    /// Idiosyncratic daily volatility of every asset.
    pub fn idio_vol(&self) -> f64 {
        self.idio_scale * self.factor_variance.sqrt()
    }

    /// MA(1) innovation variance per asset.
    pub fn resolved_noise_variance(&self, loadings: &[f64], intensities: &[f64]) -> Vec<f64> {
        if let Some(v) = &self.noise_variance {
            return v.clone();
        }
        let idio = self.idio_vol().powi(2);
        loadings
            .iter()
            .zip(intensities)
            .map(|(l, n)| {
                let daily = l * l * self.factor_variance + idio;
                self.noise_to_signal * daily / n / (1.0 + self.ma_coef * self.ma_coef)
            })
            .collect()
    }
}

/// A simulated day with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub panel: Panel,
    /// Midpoints of the equally spaced truth cells.
    pub truth_times: Vec<f64>,
    /// `Σ_t` at each truth time.
    pub truth: Vec<DMatrix<f64>>,
    /// Long-run noise variance `η_p = v_p (1 + θ)²` per asset.
    pub eta: Vec<f64>,
    /// MA(1) innovation variance per asset.
    pub noise_variance: Vec<f64>,
    /// MA(1) coefficient shared by all assets.
    pub ma_coef: f64,
    pub loadings: Vec<f64>,
    /// Euler steps at which the variance multiplier went negative and was
    /// truncated at zero.
    pub truncations: usize,
}

impl SimOutput {
    /// Truth at the cell containing `t`.
    pub fn truth_at(&self, t: f64) -> &DMatrix<f64> {
        let n = self.truth_times.len();
        let i = ((t * n as f64).floor().max(0.0) as usize).min(n - 1);
        &self.truth[i]
    }

    /// The true noise structure: autocovariances `v(1 + θ²)` and `vθ`.
    pub fn noise_profile(&self) -> NoiseProfile {
        let theta = self.ma_coef;
        NoiseProfile {
            assets: self
                .panel
                .asset_ids()
                .iter()
                .zip(&self.noise_variance)
                .zip(&self.eta)
                .map(|((id, &v), &eta)| AssetNoise {
                    asset_id: id.to_string(),
                    lag_order: usize::from(theta != 0.0),
                    autocovariances: if theta != 0.0 {
                        vec![v * (1.0 + theta * theta), v * theta]
                    } else {
                        vec![v]
                    },
                    long_run: eta,
                    floored: false,
                })
                .collect(),
        }
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulate replication 0 of `config`.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    simulate_replication(config, 0)
}

fn arrival_times(rng: &mut ChaCha8Rng, intensity: f64, sampling: Sampling) -> Vec<f64> {
    match sampling {
        Sampling::Regular => {
            let n = intensity.ceil() as usize;
            (0..=n).map(|i| i as f64 / n as f64).collect()
        }
        Sampling::Poisson => {
            let gap = Exp::new(intensity).expect("positive intensity");
            let mut out = Vec::with_capacity(intensity as usize + 16);
            let mut t = gap.sample(rng);
            while t <= 1.0 {
                out.push(t);
                t += gap.sample(rng);
            }
            out
        }
    }
}

/// Simulate replication `rep` of `config` on its own RNG stream.
pub fn simulate_replication(config: &SimConfig, rep: u64) -> Result<SimOutput> {
    config.validate()?;
    let d = config.d;
    let loadings = config.resolved_loadings();
    let intensities = config.resolved_intensities();
    let noise_variance = config.resolved_noise_variance(&loadings, &intensities);
    let theta = config.ma_coef;
    let eta: Vec<f64> = noise_variance.iter().map(|v| v * (1.0 + theta).powi(2)).collect();
    let season = config.seasonality.multiplier();
    let idio = config.idio_vol();

    let mut rng = stream_rng(config.seed, rep);

    // observation times per asset
    let obs_times: Vec<Vec<f64>> = intensities
        .iter()
        .map(|&l| arrival_times(&mut rng, l, config.sampling))
        .collect();
    for (p, times) in obs_times.iter().enumerate() {
        if times.len() < 2 {
            return Err(Error::EmptyAsset {
                asset: asset_name(p),
                count: times.len(),
            });
        }
    }

    // merged event grid: Euler grid, truth points and observation times
    let steps = config.steps_per_obs * config.n_target;
    let cells = config.truth_points;
    let truth_times: Vec<f64> = (0..cells).map(|i| (i as f64 + 0.5) / cells as f64).collect();
    let mut events: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    events.extend_from_slice(&truth_times);
    for times in &obs_times {
        events.extend_from_slice(times);
    }
    events.sort_by(f64::total_cmp);
    events.dedup();

    // initial state
    let mut u = if config.vol_of_vol > 0.0 {
        let shape = 2.0 * config.kappa / (config.vol_of_vol * config.vol_of_vol);
        Gamma::new(shape, 1.0 / shape)
            .map_err(|e| Error::Config(format!("variance multiplier law: {e}")))?
            .sample(&mut rng)
    } else {
        1.0
    };
    let mut x = vec![INITIAL_LOG_PRICE; d];
    let mut truncations = 0usize;
    let mut t_prev = 0.0;
    let mut obs_ptr = vec![0usize; d];
    let mut efficient: Vec<Vec<f64>> = obs_times.iter().map(|t| Vec::with_capacity(t.len())).collect();
    let mut truth = Vec::with_capacity(cells);
    let mut truth_ptr = 0usize;
    let rho = config.leverage;
    let rho_c = (1.0 - rho * rho).max(0.0).sqrt();
    let mut shocks = vec![0.0; d];

    for &t in &events {
        let dt = t - t_prev;
        if dt > 0.0 {
            let m = season.at(t_prev);
            let sd = dt.sqrt();
            let u_pos = u.max(0.0);
            let zw: f64 = rng.sample(StandardNormal);
            let zz: f64 = rng.sample(StandardNormal);
            for s in shocks.iter_mut() {
                *s = rng.sample(StandardNormal);
            }
            let df = m * (config.factor_variance * u_pos).sqrt() * sd * zw;
            for p in 0..d {
                x[p] += loadings[p] * df + m * idio * sd * shocks[p];
            }
            if config.vol_of_vol > 0.0 {
                let dz = rho * zw + rho_c * zz;
                u += config.kappa * (1.0 - u_pos) * dt + config.vol_of_vol * u_pos.sqrt() * sd * dz;
                if u < 0.0 {
                    truncations += 1;
                }
            }
            t_prev = t;
        }
        while truth_ptr < cells && truth_times[truth_ptr] == t {
            let m2 = season.at(t).powi(2);
            let fv = config.factor_variance * u.max(0.0);
            truth.push(DMatrix::from_fn(d, d, |p, q| {
                m2 * (fv * loadings[p] * loadings[q] + if p == q { idio * idio } else { 0.0 })
            }));
            truth_ptr += 1;
        }
        for p in 0..d {
            while obs_ptr[p] < obs_times[p].len() && obs_times[p][obs_ptr[p]] == t {
                efficient[p].push(x[p]);
                obs_ptr[p] += 1;
            }
        }
    }

    let mut series = Vec::with_capacity(d);
    for p in 0..d {
        let sd = noise_variance[p].sqrt();
        let mut prev: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
        let prices = efficient[p]
            .iter()
            .map(|&xp| {
                let e: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
                let y = xp + e + theta * prev;
                prev = e;
                y
            })
            .collect();
        series.push(ObservationSeries::new(asset_name(p), obs_times[p].clone(), prices)?);
    }

    Ok(SimOutput {
        panel: Panel::new(series)?,
        truth_times,
        truth,
        eta,
        noise_variance,
        ma_coef: config.ma_coef,
        loadings,
        truncations,
    })
}

/// Identifier of simulated asset `p`.
pub fn asset_name(p: usize) -> String {
    format!("A{}", p + 1)
}
