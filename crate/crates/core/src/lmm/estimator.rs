//! The two-step spot estimator over a block window.
//!
//! For a window `(L, U)` the equal-weight pre-estimate `Σ̂^pre` fixes the
//! weights on every block of the window, and
//!
//! ```text
//! vec Σ̂_s = (U−L+1)⁻¹ Σ_k Σ_j W_j(Ĥ_k, Σ̂^pre) vec(S_jk S_jkᵀ − c_j Ĥ_k)
//! ```
//!
//! With `Ĥ_k ≻ 0` the Kronecker algebra diagonalises: writing
//! `Ĥ^{-1/2} Σ̂^pre Ĥ^{-1/2} = QΛQᵀ`, `T = Ĥ^{1/2}Q`, `δ_ja = 1/(λ_a + c_j)` and
//! `y_j = Qᵀ Ĥ^{-1/2} S_jk`, the block term is `T N Tᵀ` with
//!
//! ```text
//! N_ab = Σ_j δ_ja δ_jb (y_ja y_jb − c_j 1{a=b}) / Ω_ab,   Ω_ab = Σ_j δ_ja δ_jb
//! ```
//!
//! and the inverse total information is `2 (T⊗T) diag(1/Ω) (T⊗T)ᵀ`. This costs
//! `O(J d²)` per block instead of `O(J d⁴ + d⁶)`. Blocks with a zero noise
//! level fall back to the direct Kronecker evaluation.

use nalgebra::DMatrix;

use super::{moment_matrix, noise_augmented, noise_scale, pre_estimate, psd_project, regularize_pre_estimate, SpotEstimate};
use crate::data::grid::{make_grid, make_grid_for, window_bounds};
use crate::data::{BlockGrid, EstimatorConfig, Panel, Side};
use crate::error::{Error, Result};
use crate::linalg::{kron, min_eigenvalue, symmetrize, vec_index, vectorize};
use crate::noise::{block_noise_levels, estimate_profile, BlockNoiseLevel, NoiseOptions, NoiseProfile};
use crate::spectral::{attach_signal_overlap, block_spectra, SpectralStats};

/// Per-block quantities needed by the estimator, computed once per panel.
#[derive(Debug, Clone)]
pub struct Estimator {
    config: EstimatorConfig,
    grid: BlockGrid,
    spectra: Vec<SpectralStats>,
    noise: Vec<BlockNoiseLevel>,
    profile: NoiseProfile,
}

struct BlockTerm {
    sigma: DMatrix<f64>,
    inv_info: Option<DMatrix<f64>>,
}

impl Estimator {
    /// Estimates the noise profile from the panel and derives the grid from
    /// its sample size.
    pub fn new(panel: &Panel, config: &EstimatorConfig) -> Result<Self> {
        let profile = estimate_profile(panel, &NoiseOptions::from(config))?;
        Self::with_profile(panel, config, profile)
    }

    pub fn with_profile(panel: &Panel, config: &EstimatorConfig, profile: NoiseProfile) -> Result<Self> {
        let grid = make_grid(config, panel)?;
        Self::with_grid(panel, config, grid, profile)
    }

    pub fn with_grid(panel: &Panel, config: &EstimatorConfig, grid: BlockGrid, profile: NoiseProfile) -> Result<Self> {
        config.validate()?;
        let j_count = grid.j_max.max(config.j_pre);
        let noise = block_noise_levels(panel, &grid, &profile, config.noise_correction, j_count)?;
        let mut spectra = block_spectra(panel, &grid, j_count);
        if config.asynchrony_correction {
            attach_signal_overlap(&mut spectra, panel, &grid, j_count);
        }
        Ok(Self {
            config: config.clone(),
            grid,
            spectra,
            noise,
            profile,
        })
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn spectra(&self) -> &[SpectralStats] {
        &self.spectra
    }

    pub fn noise_levels(&self) -> &[BlockNoiseLevel] {
        &self.noise
    }

    pub fn profile(&self) -> &NoiseProfile {
        &self.profile
    }

    pub fn dim(&self) -> usize {
        self.spectra[0].values.ncols()
    }

    /// Spot estimate at `s` without the variance.
    pub fn at(&self, s: f64) -> Result<SpotEstimate> {
        self.estimate(s, false, false)
    }

    /// Spot estimate at `s` together with `V̂_s`.
    pub fn at_with_variance(&self, s: f64) -> Result<SpotEstimate> {
        self.estimate(s, true, false)
    }

    /// Same estimate evaluated through explicit `d²×d²` Kronecker products;
    /// slow, kept as an independent reference for the fast route.
    pub fn at_reference(&self, s: f64) -> Result<SpotEstimate> {
        self.estimate(s, true, true)
    }

    /// One estimate per block, evaluated at the block midpoints.
    pub fn path(&self) -> Result<Vec<SpotEstimate>> {
        (0..self.grid.num_blocks)
            .map(|b| self.at(self.grid.block_midpoint(b)))
            .collect()
    }

    /// Like [`Estimator::path`] but with `V̂` at every point.
    pub fn path_with_variance(&self) -> Result<Vec<SpotEstimate>> {
        (0..self.grid.num_blocks)
            .map(|b| self.at_with_variance(self.grid.block_midpoint(b)))
            .collect()
    }

    /// Regularised pre-estimate for the window containing `s`.
    pub fn pre_estimate_at(&self, s: f64) -> DMatrix<f64> {
        let window = window_bounds(&self.grid, s, self.config.side);
        pre_estimate(&self.spectra, &self.noise, window, self.config.j_pre, self.grid.h)
    }

    fn estimate(&self, s: f64, with_vhat: bool, reference: bool) -> Result<SpotEstimate> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Input(format!("evaluation time {s} outside [0, 1]")));
        }
        let window = window_bounds(&self.grid, s, self.config.side);
        let d = self.dim();
        let pre = regularize_pre_estimate(&pre_estimate(
            &self.spectra,
            &self.noise,
            window,
            self.config.j_pre,
            self.grid.h,
        ));

        let mut sum = DMatrix::zeros(d, d);
        let mut vsum = with_vhat.then(|| DMatrix::zeros(d * d, d * d));
        for k in window.0..=window.1 {
            let h_k = &self.noise[k].diag;
            let term = if !reference && h_k.iter().all(|&x| x > 0.0) {
                self.block_fast(k, &pre, with_vhat)
            } else {
                self.block_reference(k, &pre, with_vhat)?
            };
            sum += term.sigma;
            if let (Some(v), Some(inv)) = (vsum.as_mut(), term.inv_info) {
                *v += inv;
            }
        }
        let b = (window.1 - window.0 + 1) as f64;
        let raw = symmetrize(&(sum / b));
        let raw_min = min_eigenvalue(&raw);
        let (sigma, psd_adjusted) = if self.config.psd_projection && raw_min < 0.0 {
            (psd_project(&raw), true)
        } else {
            (raw, false)
        };
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite spot estimate at s = {s}")));
        }
        Ok(SpotEstimate {
            s,
            sigma,
            window,
            psd_adjusted,
            raw_min_eigenvalue: raw_min,
            vhat: vsum.map(|v| symmetrize(&(v / b))),
        })
    }

    fn block_fast(&self, k: usize, pre: &DMatrix<f64>, with_vhat: bool) -> BlockTerm {
        let d = self.dim();
        let h = self.grid.h;
        let hs: Vec<f64> = self.noise[k].diag.iter().map(|x| x.sqrt()).collect();
        let c_mat = DMatrix::from_fn(d, d, |p, q| pre[(p, q)] / (hs[p] * hs[q]));
        let eig = symmetrize(&c_mat).symmetric_eigen();
        let lam: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let q = eig.eigenvectors;

        // whitened coordinates: T⁻¹ = Qᵀ diag(1/√H)
        let t_inv = DMatrix::from_fn(d, d, |a, p| q[(p, a)] / hs[p]);
        let mut num = DMatrix::zeros(d, d);
        let mut omega = DMatrix::zeros(d, d);
        let mut delta = vec![0.0; d];
        for j in 1..=self.grid.j_max {
            let c = noise_scale(j, h);
            for a in 0..d {
                delta[a] = 1.0 / (lam[a] + c);
            }
            let g = &t_inv * moment_matrix(&self.spectra[k], &self.noise[k], j, h) * t_inv.transpose();
            for a in 0..d {
                for b in 0..=a {
                    let w = delta[a] * delta[b];
                    omega[(a, b)] += w;
                    num[(a, b)] += w * g[(a, b)];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                omega[(b, a)] = omega[(a, b)];
                num[(b, a)] = num[(a, b)];
            }
        }
        let n = num.component_div(&omega);
        let t = DMatrix::from_fn(d, d, |p, a| hs[p] * q[(p, a)]);
        let sigma = &t * n * t.transpose();

        let inv_info = with_vhat.then(|| {
            let tt = kron(&t, &t);
            let inv_omega = DMatrix::from_fn(d * d, 1, |r, _| 1.0 / omega[(r / d, r % d)]);
            let scaled = DMatrix::from_fn(d * d, d * d, |r, c| tt[(r, c)] * inv_omega[(c, 0)]);
            &scaled * tt.transpose() * 2.0
        });
        BlockTerm { sigma, inv_info }
    }

    fn block_reference(&self, k: usize, pre: &DMatrix<f64>, with_vhat: bool) -> Result<BlockTerm> {
        let d = self.dim();
        let h = self.grid.h;
        let h_k = &self.noise[k].diag;
        let mut total = DMatrix::zeros(d * d, d * d);
        let mut rhs = nalgebra::DVector::zeros(d * d);
        for j in 1..=self.grid.j_max {
            let a = noise_augmented(pre, h_k, j, h);
            let a_inv = a
                .try_inverse()
                .ok_or_else(|| Error::Numerical(format!("block {k}: Σ^pre + c_j H is singular")))?;
            let info = kron(&a_inv, &a_inv) * 0.5;
            rhs += &info * vectorize(&moment_matrix(&self.spectra[k], &self.noise[k], j, h));
            total += info;
        }
        let total_inv = total
            .try_inverse()
            .filter(|m| m.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Numerical(format!("block {k}: total Fisher information is singular")))?;
        let v = &total_inv * rhs;
        let sigma = DMatrix::from_fn(d, d, |p, q| v[vec_index(d, p, q)]);
        Ok(BlockTerm {
            sigma,
            inv_info: with_vhat.then_some(total_inv),
        })
    }
}

/// Information horizon of a causal estimate at `s`: the end of the block
/// containing `s` under the geometry derived from data up to `s`.
pub fn causal_horizon(panel: &Panel, config: &EstimatorConfig, s: f64) -> Result<(BlockGrid, f64)> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Input(format!("causal evaluation time {s} must lie in (0, 1]")));
    }
    let seen = panel.truncated(s)?;
    // projected full-day count of the least liquid asset
    let n_hat = seen
        .series()
        .iter()
        .map(|x| (x.len() as f64 / s).floor() as usize)
        .min()
        .unwrap_or(0);
    let grid = make_grid_for(config, n_hat, n_hat)?;
    let horizon = ((grid.block_of(s) + 1) as f64 * grid.h).min(1.0);
    Ok((grid, horizon))
}

/// One-sided estimate at `s` that uses no observation after the end of the
/// block containing `s`.
///
/// The geometry comes from the sample size projected from observations up
/// to `s`; the noise profile, noise levels and spectra come from observations
/// up to the horizon returned by [`causal_horizon`]. Deleting anything later
/// leaves the result bit-for-bit unchanged.
pub fn causal_estimate(panel: &Panel, config: &EstimatorConfig, s: f64, with_vhat: bool) -> Result<SpotEstimate> {
    let (grid, horizon) = causal_horizon(panel, config, s)?;
    let visible = panel.truncated(horizon)?;
    let config = EstimatorConfig {
        side: Side::OneSided,
        ..config.clone()
    };
    let profile = estimate_profile(&visible, &NoiseOptions::from(&config))?;
    let est = Estimator::with_grid(&visible, &config, grid, profile)?;
    if with_vhat {
        est.at_with_variance(s)
    } else {
        est.at(s)
    }
}
