//! Local method of moments: bias-corrected block moments, the equal-weight
//! pre-estimate, Fisher-information weights and the PSD projection.
//!
//! On block `k` the spectral statistics are approximately independent across
//! frequencies with `S_jk ~ N(0, Σ + c_j H_k)`, `c_j = π²j²/h²`. Each
//! frequency therefore yields an unbiased moment `S_jk S_jkᵀ − c_j H_k` whose
//! precision is the Fisher information `½ A_j⁻¹ ⊗ A_j⁻¹`, `A_j = Σ + c_j H_k`.
//! When the block's noise level carries exact per-frequency variances those
//! replace `c_j H_k` in the moment, and when the statistics carry signal
//! overlaps `K_jk` the moment is divided by them entrywise so that it stays
//! unbiased under asynchronous sampling; the weights keep the `c_j H_k` form.

pub mod estimator;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, symmetrize, vectorize};
use crate::noise::BlockNoiseLevel;
use crate::spectral::SpectralStats;

/// Smallest signal overlap a moment entry is divided by.
pub const OVERLAP_FLOOR: f64 = 0.5;

/// Relative eigenvalue floor applied to the pre-estimate before it enters
/// the weights.
pub const PRE_ESTIMATE_FLOOR: f64 = 1e-6;

/// Noise amplification `π²j²/h²` of frequency `j`.
#[inline]
pub fn noise_scale(j: usize, h: f64) -> f64 {
    let x = PI * j as f64 / h;
    x * x
}

/// A spot covariance estimate at time `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotEstimate {
    pub s: f64,
    /// `Σ̂_s`, after projection when that is enabled.
    pub sigma: DMatrix<f64>,
    /// Inclusive block window `(L, U)`.
    pub window: (usize, usize),
    /// True when the projection changed the estimate.
    pub psd_adjusted: bool,
    /// Smallest eigenvalue before any projection.
    pub raw_min_eigenvalue: f64,
    /// Window-averaged inverse Fisher information `V̂_s`, when requested.
    pub vhat: Option<DMatrix<f64>>,
}

impl SpotEstimate {
    /// Number of blocks in the window, `U − L + 1`.
    pub fn window_len(&self) -> usize {
        self.window.1 - self.window.0 + 1
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Whether the unprojected estimate was positive semi-definite.
    pub fn raw_is_psd(&self) -> bool {
        let scale = self.sigma.diagonal().iter().map(|x| x.abs()).fold(0.0, f64::max);
        self.raw_min_eigenvalue >= -1e-12 * scale
    }
}

/// Frequency weights of one block: `W_j = I_k⁻¹ I_jk`, `j = 1..=J`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub block: usize,
    pub weights: Vec<DMatrix<f64>>,
}

impl WeightSet {
    pub fn sum(&self) -> DMatrix<f64> {
        let n = self.weights[0].nrows();
        self.weights.iter().fold(DMatrix::zeros(n, n), |acc, w| acc + w)
    }
}

/// `vec((S_jk S_jkᵀ − N_jk) ⊘ K_jk)` with `N_jk` the noise variance of the
/// statistics, `π²j²h⁻² diag(Ĥ_k)` unless exact per-frequency values are
/// attached, and `K_jk` the signal overlap (all ones unless attached; entries
/// below [`OVERLAP_FLOOR`] are raised to it).
pub fn bias_corrected_moment(stats: &SpectralStats, noise: &BlockNoiseLevel, j: usize, h: f64) -> DVector<f64> {
    vectorize(&moment_matrix(stats, noise, j, h))
}

pub(crate) fn moment_matrix(stats: &SpectralStats, noise: &BlockNoiseLevel, j: usize, h: f64) -> DMatrix<f64> {
    let s = stats.frequency(j);
    let mut m = &s * s.transpose();
    for p in 0..noise.diag.len() {
        m[(p, p)] -= noise.variance(j, h, p);
    }
    if let Some(k) = stats.overlap.as_ref().and_then(|o| o.get(j - 1)) {
        m.zip_apply(k, |x, kappa| *x /= kappa.max(OVERLAP_FLOOR));
    }
    m
}

/// Equal-weight pre-estimate: bias-corrected moments averaged over the
/// window's blocks and the first `j_pre` frequencies.
pub fn pre_estimate(
    spectra: &[SpectralStats],
    noise: &[BlockNoiseLevel],
    window: (usize, usize),
    j_pre: usize,
    h: f64,
) -> DMatrix<f64> {
    let (l, u) = window;
    let d = spectra[l].values.ncols();
    let mut acc = DMatrix::zeros(d, d);
    for k in l..=u {
        for j in 1..=j_pre {
            acc += moment_matrix(&spectra[k], &noise[k], j, h);
        }
    }
    symmetrize(&(acc / ((u - l + 1) * j_pre) as f64))
}

/// Nearest positive semi-definite matrix in Frobenius norm: negative
/// eigenvalues are set to zero.
pub fn psd_project(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    eigen_floor(sigma, 0.0)
}

/// Recomposes `sigma` with every eigenvalue raised to at least `floor`.
pub(crate) fn eigen_floor(sigma: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(sigma).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return symmetrize(sigma);
    }
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&lam) * q.transpose()))
}

/// Pre-estimate made safe for the weights: projected onto the cone of
/// matrices with eigenvalues at least `1e-6 · trace/d`.
pub fn regularize_pre_estimate(sigma_pre: &DMatrix<f64>) -> DMatrix<f64> {
    let d = sigma_pre.nrows() as f64;
    let projected = psd_project(sigma_pre);
    let floor = PRE_ESTIMATE_FLOOR * projected.trace() / d;
    eigen_floor(&projected, floor)
}

fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

/// `½ A⁻¹ ⊗ A⁻¹` with `A = Σ + π²j²h⁻² diag(noise_diag)`.
pub fn fisher_info(sigma: &DMatrix<f64>, noise_diag: &[f64], j: usize, h: f64) -> Result<DMatrix<f64>> {
    let a_inv = inverse(&noise_augmented(sigma, noise_diag, j, h), "Σ + c_j H")?;
    Ok(kron(&a_inv, &a_inv) * 0.5)
}

pub(crate) fn noise_augmented(sigma: &DMatrix<f64>, noise_diag: &[f64], j: usize, h: f64) -> DMatrix<f64> {
    let c = noise_scale(j, h);
    let mut a = sigma.clone();
    for (p, &hp) in noise_diag.iter().enumerate() {
        a[(p, p)] += c * hp;
    }
    a
}

/// Information-optimal frequency weights `W_j = (Σ_u I_u)⁻¹ I_j`.
///
/// Evaluated in closed form after whitening by `Σ`: with
/// `Σ^{−1/2} H Σ^{−1/2} = P diag(m) Pᵀ` and `S = Σ^{1/2} P`, every
/// `A_j = S (I + c_j diag(m)) Sᵀ`, so `W_j = (S⊗S) diag(e_ja e_jb / Ω_ab) (S⊗S)⁻¹`
/// with `e_ja = 1/(1 + c_j m_a)` and `Ω_ab = Σ_j e_ja e_jb`. The weights then sum
/// to the identity up to rounding in `S S⁻¹`, however ill-conditioned the
/// total information is. `sigma_pre` must be positive definite.
pub fn optimal_weights(sigma_pre: &DMatrix<f64>, noise_diag: &[f64], j_max: usize, h: f64) -> Result<WeightSet> {
    if j_max == 0 {
        return Err(Error::Config("spectral cutoff must be at least 1".into()));
    }
    let d = sigma_pre.nrows();
    let eig = symmetrize(sigma_pre).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::Numerical("pre-estimate is not positive definite".into()));
    }
    let u = &eig.eigenvectors;
    let root = |power: f64| {
        let lam = eig.eigenvalues.map(|l| l.powf(power));
        u * DMatrix::from_diagonal(&lam) * u.transpose()
    };
    let (sqrt, inv_sqrt) = (root(0.5), root(-0.5));
    let noise = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(noise_diag));
    let whitened = symmetrize(&(&inv_sqrt * noise * &inv_sqrt)).symmetric_eigen();
    let m: Vec<f64> = whitened.eigenvalues.iter().map(|&x| x.max(0.0)).collect();
    let p = &whitened.eigenvectors;
    let s_mat = &sqrt * p;
    let s_inv = p.transpose() * &inv_sqrt;

    let e: Vec<Vec<f64>> = (1..=j_max)
        .map(|j| {
            let c = noise_scale(j, h);
            m.iter().map(|&ma| 1.0 / (1.0 + c * ma)).collect()
        })
        .collect();
    let mut omega = DMatrix::<f64>::zeros(d, d);
    for ej in &e {
        for a in 0..d {
            for b in 0..d {
                omega[(a, b)] += ej[a] * ej[b];
            }
        }
    }
    let left = kron(&s_mat, &s_mat);
    let right = kron(&s_inv, &s_inv);
    let weights = e
        .iter()
        .map(|ej| {
            let scaled = DMatrix::from_fn(d * d, d * d, |r, c| {
                let (a, b) = (c / d, c % d);
                left[(r, c)] * ej[a] * ej[b] / omega[(a, b)]
            });
            scaled * &right
        })
        .collect();
    Ok(WeightSet { block: 0, weights })
}
