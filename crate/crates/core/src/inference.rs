//! Feasible confidence bands for spot covariances, correlations and betas.
//!
//! `V̂_s` is the window average of the inverse total Fisher information
//! `(Σ_j Î_jk)⁻¹`. Because `Î_jk = ½ A⁻¹⊗A⁻¹` is the information of a
//! Gaussian vector with covariance `A`, the moment of frequency `j` has
//! covariance `½ Z Î_jk⁻¹` with `Z = I + K_d`, and the information-weighted
//! estimator inherits
//!
//! ```text
//! Cov(vec Σ̂_s) ≈ Z V̂_s / (2 (U − L + 1)).
//! ```
//!
//! On a variance entry this is `V̂_rr / B`, on a covariance entry
//! `(V̂_rr + V̂_{r,K(r)}) / (2B)`. Correlations and betas follow by the delta
//! method from this covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{commutation, symmetrize, vec_index};
use crate::lmm::SpotEstimate;

/// Quantile of the standard normal distribution.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `Cov(vec(ZZᵀ))` for `Z ~ N(0, I_d)`: the identity plus the commutation
/// matrix.
pub fn symmetrizer_cov(d: usize) -> DMatrix<f64> {
    DMatrix::identity(d * d, d * d) + commutation(d)
}

/// Window average of inverted total informations.
pub fn avar_estimate(total_infos: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = total_infos
        .first()
        .ok_or_else(|| Error::Input("empty window".into()))?;
    let n = first.nrows();
    let mut acc = DMatrix::zeros(n, n);
    for (k, info) in total_infos.iter().enumerate() {
        let inv = info
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("total information of block {k} is singular")))?;
        acc += inv;
    }
    Ok(symmetrize(&(acc / total_infos.len() as f64)))
}

/// Finite-sample covariance of `vec Σ̂_s` from `V̂_s` and the window length.
pub fn estimator_covariance(vhat: &DMatrix<f64>, window_len: usize) -> DMatrix<f64> {
    let d = (vhat.nrows() as f64).sqrt().round() as usize;
    let z = symmetrizer_cov(d);
    symmetrize(&(z * vhat)) / (2.0 * window_len as f64)
}

/// A derived pair statistic with its delta-method variance and band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStatistic {
    pub p: usize,
    pub q: usize,
    pub value: f64,
    /// Variance of the point estimate (already divided by the window length).
    pub variance: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Bands for every entry of `Σ̂_s` and every correlation and beta pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub estimate: SpotEstimate,
    pub vhat: DMatrix<f64>,
    /// `Cov(vec Σ̂_s)`.
    pub covariance: DMatrix<f64>,
    pub level: f64,
    /// Half-widths of the entrywise bands of `Σ̂_s`.
    pub sigma_half_width: DMatrix<f64>,
    /// `ρ̂^{(pq)}` for `p < q`.
    pub correlations: Vec<PairStatistic>,
    /// `β̂^{(pq)} = Σ̂^{(pq)}/Σ̂^{(pp)}` for `p ≠ q`.
    pub betas: Vec<PairStatistic>,
}

impl InferenceResult {
    pub fn sigma_band(&self, p: usize, q: usize) -> (f64, f64) {
        let x = self.estimate.sigma[(p, q)];
        let w = self.sigma_half_width[(p, q)];
        (x - w, x + w)
    }

    pub fn correlation(&self, p: usize, q: usize) -> Option<&PairStatistic> {
        let (p, q) = if p < q { (p, q) } else { (q, p) };
        self.correlations.iter().find(|c| c.p == p && c.q == q)
    }

    pub fn beta(&self, p: usize, q: usize) -> Option<&PairStatistic> {
        self.betas.iter().find(|c| c.p == p && c.q == q)
    }
}

fn check_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(normal_quantile(0.5 * (1.0 + level)))
}

/// Delta-method variance of `ρ̂^{(pq)} = Σ^{(pq)}/√(Σ^{(pp)}Σ^{(qq)})` given the
/// covariance `av` of `vec Σ̂`.
pub fn correlation_variance(sigma: &DMatrix<f64>, av: &DMatrix<f64>, p: usize, q: usize) -> f64 {
    let d = sigma.nrows();
    let (pq, pp, qq) = (vec_index(d, p, q), vec_index(d, p, p), vec_index(d, q, q));
    let (s_pq, s_pp, s_qq) = (sigma[(p, q)], sigma[(p, p)], sigma[(q, q)]);
    let prod = s_pp * s_qq;
    av[(pq, pq)] / prod + 0.25 * s_pq * s_pq / (s_pp * prod) * av[(pp, pp)] / s_pp
        + 0.25 * s_pq * s_pq / (s_qq * prod) * av[(qq, qq)] / s_qq
        - s_pq / (s_pp * prod) * av[(pq, pp)]
        - s_pq / (s_qq * prod) * av[(pq, qq)]
        + 0.5 * s_pq * s_pq / (prod * prod) * av[(pp, qq)]
}

/// Delta-method variance of `β̂^{(pq)} = Σ^{(pq)}/Σ^{(pp)}`.
pub fn beta_variance(sigma: &DMatrix<f64>, av: &DMatrix<f64>, p: usize, q: usize) -> f64 {
    let d = sigma.nrows();
    let (pq, pp) = (vec_index(d, p, q), vec_index(d, p, p));
    let (s_pq, s_pp) = (sigma[(p, q)], sigma[(p, p)]);
    av[(pq, pq)] / (s_pp * s_pp) + s_pq * s_pq / s_pp.powi(4) * av[(pp, pp)]
        - 2.0 * s_pq / s_pp.powi(3) * av[(pq, pp)]
}

fn positive_variances(sigma: &DMatrix<f64>, p: usize, q: usize) -> Result<()> {
    for r in [p, q] {
        if !(sigma[(r, r)] > 0.0) {
            return Err(Error::Numerical(format!(
                "variance of asset {r} is not positive ({:e})",
                sigma[(r, r)]
            )));
        }
    }
    Ok(())
}

fn pair(p: usize, q: usize, value: f64, variance: f64, z: f64, clip: bool) -> PairStatistic {
    let half_width = z * variance.max(0.0).sqrt();
    let (mut lower, mut upper) = (value - half_width, value + half_width);
    if clip {
        lower = lower.max(-1.0);
        upper = upper.min(1.0);
    }
    PairStatistic {
        p,
        q,
        value,
        variance,
        half_width,
        lower,
        upper,
    }
}

/// Spot correlations for all pairs `p < q`, clipped to `[−1, 1]`.
pub fn spot_correlation(estimate: &SpotEstimate, vhat: &DMatrix<f64>, level: f64) -> Result<Vec<PairStatistic>> {
    let z = check_level(level)?;
    let av = estimator_covariance(vhat, estimate.window_len());
    let s = &estimate.sigma;
    let d = s.nrows();
    let mut out = Vec::new();
    for p in 0..d {
        for q in p + 1..d {
            positive_variances(s, p, q)?;
            let rho = (s[(p, q)] / (s[(p, p)] * s[(q, q)]).sqrt()).clamp(-1.0, 1.0);
            out.push(pair(p, q, rho, correlation_variance(s, &av, p, q), z, true));
        }
    }
    Ok(out)
}

/// Spot betas of every asset `q` on every other asset `p`.
pub fn spot_beta(estimate: &SpotEstimate, vhat: &DMatrix<f64>, level: f64) -> Result<Vec<PairStatistic>> {
    let z = check_level(level)?;
    let av = estimator_covariance(vhat, estimate.window_len());
    let s = &estimate.sigma;
    let d = s.nrows();
    let mut out = Vec::new();
    for p in 0..d {
        for q in 0..d {
            if p == q {
                continue;
            }
            positive_variances(s, p, p)?;
            out.push(pair(p, q, s[(p, q)] / s[(p, p)], beta_variance(s, &av, p, q), z, false));
        }
    }
    Ok(out)
}

/// Entrywise bands for `Σ̂_s` plus correlation and beta bands.
pub fn confidence_bands(estimate: &SpotEstimate, vhat: &DMatrix<f64>, level: f64) -> Result<InferenceResult> {
    let z = check_level(level)?;
    let d = estimate.dim();
    if vhat.nrows() != d * d {
        return Err(Error::Dimension {
            expected: d * d,
            actual: vhat.nrows(),
        });
    }
    let covariance = estimator_covariance(vhat, estimate.window_len());
    let sigma_half_width = DMatrix::from_fn(d, d, |p, q| {
        let r = vec_index(d, p, q);
        z * covariance[(r, r)].max(0.0).sqrt()
    });
    let (correlations, betas) = if d > 1 {
        (spot_correlation(estimate, vhat, level)?, spot_beta(estimate, vhat, level)?)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(InferenceResult {
        estimate: estimate.clone(),
        vhat: vhat.clone(),
        covariance,
        level,
        sigma_half_width,
        correlations,
        betas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;
    use proptest::prelude::*;

    fn estimate(sigma: DMatrix<f64>, window: (usize, usize)) -> SpotEstimate {
        SpotEstimate {
            s: 0.5,
            sigma,
            window,
            psd_adjusted: false,
            raw_min_eigenvalue: 0.0,
            vhat: None,
        }
    }

    /// Gradient-form delta method with central differences over all `d²`
    /// coordinates of `vec Σ`.
    fn oracle(f: impl Fn(&[f64]) -> f64, sigma: &DMatrix<f64>, av: &DMatrix<f64>) -> f64 {
        let d = sigma.nrows();
        let v: Vec<f64> = (0..d * d).map(|r| sigma[(r / d, r % d)]).collect();
        let grad: Vec<f64> = (0..d * d)
            .map(|r| {
                let step = 1e-6 * v[r].abs().max(1e-3);
                let mut up = v.clone();
                let mut dn = v.clone();
                up[r] += step;
                dn[r] -= step;
                (f(&up) - f(&dn)) / (2.0 * step)
            })
            .collect();
        (0..d * d)
            .map(|a| (0..d * d).map(|b| grad[a] * av[(a, b)] * grad[b]).sum::<f64>())
            .sum()
    }

    fn random_spd(entries: &[f64], d: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(d, d, |i, j| entries[i * d + j]);
        &b * b.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn normal_quantiles() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!(normal_quantile(0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetrizer_examples() {
        assert_eq!(symmetrizer_cov(1)[(0, 0)], 2.0);
        let z = symmetrizer_cov(2);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[2., 0., 0., 0., 0., 1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 2.],
        );
        assert_eq!(z, expected);
        for d in 1..=6 {
            let z = symmetrizer_cov(d);
            assert_eq!(z, z.transpose());
            assert!(z.symmetric_eigenvalues().min() >= -1e-12);
        }
    }

    #[test]
    fn scalar_avar() {
        let a = 1.7;
        let v = avar_estimate(&[DMatrix::from_element(1, 1, 0.5 / (a * a))]).unwrap();
        assert!((v[(0, 0)] - 2.0 * a * a).abs() < 1e-12);
        // doubling the noise level with zero signal doubles a
        let v2 = avar_estimate(&[DMatrix::from_element(1, 1, 0.5 / (4.0 * a * a))]).unwrap();
        assert!((v2[(0, 0)] / v[(0, 0)] - 4.0).abs() < 1e-12);
        let info = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let one = avar_estimate(&[info.clone()]).unwrap();
        let many = avar_estimate(&[info.clone(), info.clone(), info]).unwrap();
        assert!((one - many).norm() < 1e-14);
    }

    #[test]
    fn scalar_band() {
        let e = estimate(DMatrix::from_element(1, 1, 3.0), (10, 19));
        let vhat = DMatrix::from_element(1, 1, 0.8);
        let r = confidence_bands(&e, &vhat, 0.95).unwrap();
        let expected = normal_quantile(0.975) * (0.8f64 / 10.0).sqrt();
        assert!((r.sigma_half_width[(0, 0)] - expected).abs() < 1e-12);
        let zero = confidence_bands(&e, &DMatrix::zeros(1, 1), 0.95).unwrap();
        assert_eq!(zero.sigma_band(0, 0), (3.0, 3.0));
    }

    #[test]
    fn band_covariance_matches_moment_variance() {
        // single frequency, single block: Var(S Sᵀ) = (I + K)(A ⊗ A)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let a_inv = a.clone().try_inverse().unwrap();
        let info = kron(&a_inv, &a_inv) * 0.5;
        let vhat = avar_estimate(&[info]).unwrap();
        let cov = estimator_covariance(&vhat, 1);
        let exact = symmetrizer_cov(2) * kron(&a, &a);
        assert!((cov - exact).norm() < 1e-12);
    }

    #[test]
    fn band_halves_with_quadrupled_window() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.5]);
        let vhat = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.1 });
        let short = confidence_bands(&estimate(sigma.clone(), (0, 4)), &vhat, 0.9).unwrap();
        let long = confidence_bands(&estimate(sigma, (0, 9)), &vhat, 0.9).unwrap();
        for (a, b) in short.sigma_half_width.iter().zip(long.sigma_half_width.iter()) {
            assert!((b / a - 0.5f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn correlation_examples() {
        let e = estimate(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0]), (0, 0));
        let rho = spot_correlation(&e, &DMatrix::identity(4, 4), 0.95).unwrap();
        assert!((rho[0].value - 0.5).abs() < 1e-15);

        let ident = DMatrix::identity(2, 2);
        let av = DMatrix::from_fn(4, 4, |i, j| 1.0 + (i * 4 + j) as f64 * 0.01 + (j * 4 + i) as f64 * 0.01);
        assert!((correlation_variance(&ident, &av, 0, 1) - av[(1, 1)]).abs() < 1e-15);
        assert!((beta_variance(&ident, &av, 0, 1) - av[(1, 1)]).abs() < 1e-15);

        let e = estimate(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]), (0, 0));
        let beta = spot_beta(&e, &DMatrix::identity(4, 4), 0.95).unwrap();
        assert!((beta.iter().find(|b| b.p == 0).unwrap().value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn correlation_bands_are_clipped() {
        let e = estimate(DMatrix::from_row_slice(2, 2, &[1.0, 0.99, 0.99, 1.0]), (0, 0));
        let vhat = DMatrix::identity(4, 4) * 10.0;
        for c in spot_correlation(&e, &vhat, 0.95).unwrap() {
            assert!(c.lower >= -1.0 && c.upper <= 1.0 && c.lower <= c.value && c.value <= c.upper);
        }
    }

    #[test]
    fn nonpositive_variance_is_an_error() {
        let e = estimate(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), (0, 0));
        assert!(spot_correlation(&e, &DMatrix::identity(4, 4), 0.95).unwrap_err().is_numerical());
    }

    proptest! {
        #[test]
        fn displays_match_gradient_oracle(
            s in prop::collection::vec(-1.0f64..1.0, 16),
            v in prop::collection::vec(-1.0f64..1.0, 256),
            d in 2usize..=4,
        ) {
            let sigma = random_spd(&s, d);
            let b = DMatrix::from_fn(d * d, d * d, |i, j| v[i * 16 + j]);
            let av = &b * b.transpose();
            for p in 0..d {
                for q in 0..d {
                    if p == q { continue; }
                    let rho = |x: &[f64]| x[p * d + q] / (x[p * d + p] * x[q * d + q]).sqrt();
                    let beta = |x: &[f64]| x[p * d + q] / x[p * d + p];
                    let (got, want) = (correlation_variance(&sigma, &av, p, q), oracle(rho, &sigma, &av));
                    prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-12), "rho {got} vs {want}");
                    let (got, want) = (beta_variance(&sigma, &av, p, q), oracle(beta, &sigma, &av));
                    prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-12), "beta {got} vs {want}");
                }
            }
        }

        #[test]
        fn correlation_variance_is_scale_free(
            s in prop::collection::vec(-1.0f64..1.0, 9),
            v in prop::collection::vec(-1.0f64..1.0, 81),
            c in prop::collection::vec(0.1f64..10.0, 3),
        ) {
            let sigma = random_spd(&s, 3);
            let b = DMatrix::from_fn(9, 9, |i, j| v[i * 9 + j]);
            let av = &b * b.transpose();
            let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&c));
            let scaled = &dm * &sigma * &dm;
            let dd = kron(&dm, &dm);
            let av_scaled = &dd * &av * &dd;
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                let a = correlation_variance(&sigma, &av, p, q);
                let b = correlation_variance(&scaled, &av_scaled, p, q);
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300));
            }
        }
    }
}
