//! Integrated relative error metrics of an estimated covariance path.
//!
//! For one replication the integrand `[Σ̂^{(pq)}_t/Σ^{(pq)}_t − 1]²` is
//! integrated by the midpoint rule on the truth grid. Summing over replications
//! and normalising gives
//!
//! ```text
//! MIFB   = Σ_all  / (M d²)
//! MISE_c = Σ_{p<q} / (M d(d−1)/2)
//! MISE_v = Σ_{p=q} / (M d)
//! ```
//!
//! so that `d² MIFB = d(d−1) MISE_c + d MISE_v` for symmetric estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truth entries with `|Σ^{(pq)}| < RATIO_FLOOR · √(Σ^{(pp)} Σ^{(qq)})` are
/// excluded from the ratio metrics.
pub const RATIO_FLOOR: f64 = 1e-6;

/// Integrated squared relative errors of one or more replications.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSums {
    /// Over all `d²` entries.
    pub all: f64,
    /// Over the entries `p < q`.
    pub upper: f64,
    /// Over the diagonal.
    pub diag: f64,
    /// Number of excluded `(p, q, t)` cells.
    pub excluded: usize,
    /// Number of replications accumulated.
    pub reps: usize,
}

impl ErrorSums {
    /// Integrate the squared relative errors of `estimate` (evaluated on the
    /// truth times) against `truth`.
    pub fn integrate(estimate: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<Self> {
        if estimate.len() != truth.len() || truth.is_empty() {
            return Err(Error::Dimension {
                expected: truth.len(),
                actual: estimate.len(),
            });
        }
        let d = truth[0].nrows();
        let w = 1.0 / truth.len() as f64;
        let mut sums = ErrorSums {
            reps: 1,
            ..Default::default()
        };
        for (e, s) in estimate.iter().zip(truth) {
            if e.shape() != (d, d) || s.shape() != (d, d) {
                return Err(Error::Dimension {
                    expected: d,
                    actual: e.nrows(),
                });
            }
            for p in 0..d {
                for q in 0..d {
                    let scale = (s[(p, p)] * s[(q, q)]).abs().sqrt();
                    if !(s[(p, q)].abs() >= RATIO_FLOOR * scale) || s[(p, q)] == 0.0 {
                        sums.excluded += 1;
                        continue;
                    }
                    let r = (e[(p, q)] / s[(p, q)] - 1.0).powi(2) * w;
                    sums.all += r;
                    if p == q {
                        sums.diag += r;
                    } else if p < q {
                        sums.upper += r;
                    }
                }
            }
        }
        Ok(sums)
    }

    pub fn merge(&mut self, other: &Self) {
        self.all += other.all;
        self.upper += other.upper;
        self.diag += other.diag;
        self.excluded += other.excluded;
        self.reps += other.reps;
    }
}

/// `MIFB` from accumulated sums over replications of a `d`-dimensional path.
pub fn mifb(sums: &ErrorSums, d: usize) -> Result<f64> {
    check(sums, d)?;
    Ok(sums.all / (sums.reps * d * d) as f64)
}

/// `MISE_c`; undefined for `d = 1`.
pub fn mise_c(sums: &ErrorSums, d: usize) -> Result<f64> {
    check(sums, d)?;
    if d < 2 {
        return Err(Error::Config("MISE_c needs at least two assets".into()));
    }
    Ok(sums.upper / (sums.reps * d * (d - 1) / 2) as f64)
}

/// `MISE_v`.
pub fn mise_v(sums: &ErrorSums, d: usize) -> Result<f64> {
    check(sums, d)?;
    Ok(sums.diag / (sums.reps * d) as f64)
}

fn check(sums: &ErrorSums, d: usize) -> Result<()> {
    if sums.reps == 0 || d == 0 {
        return Err(Error::Input("no replications to average".into()));
    }
    Ok(())
}

/// Relative residual of `d² MIFB = d(d−1) MISE_c + d MISE_v`.
pub fn decomposition_residual(sums: &ErrorSums, d: usize) -> Result<f64> {
    let lhs = (d * d) as f64 * mifb(sums, d)?;
    let c = if d > 1 { (d * (d - 1)) as f64 * mise_c(sums, d)? } else { 0.0 };
    let rhs = c + d as f64 * mise_v(sums, d)?;
    Ok((lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth_path(d: usize, len: usize) -> Vec<DMatrix<f64>> {
        (0..len)
            .map(|i| {
                let t = i as f64 / len as f64;
                DMatrix::from_fn(d, d, |p, q| if p == q { 1.0 + t } else { 0.3 + 0.1 * t })
            })
            .collect()
    }

    #[test]
    fn exact_estimate_scores_zero() {
        let truth = truth_path(3, 50);
        let sums = ErrorSums::integrate(&truth, &truth).unwrap();
        assert_eq!(mifb(&sums, 3).unwrap(), 0.0);
        assert_eq!(mise_c(&sums, 3).unwrap(), 0.0);
        assert_eq!(mise_v(&sums, 3).unwrap(), 0.0);
    }

    #[test]
    fn doubled_estimate_scores_one() {
        let truth = truth_path(3, 50);
        let doubled: Vec<_> = truth.iter().map(|s| s * 2.0).collect();
        let sums = ErrorSums::integrate(&doubled, &truth).unwrap();
        assert!((mifb(&sums, 3).unwrap() - 1.0).abs() < 1e-12);
        assert!((mifb(&sums, 3).unwrap().sqrt() * 100.0 - 100.0).abs() < 1e-9);
        assert!((mise_c(&sums, 3).unwrap() - 1.0).abs() < 1e-12);
        assert!((mise_v(&sums, 3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn univariate_covariance_error_is_undefined() {
        let truth = truth_path(1, 10);
        let sums = ErrorSums::integrate(&truth, &truth).unwrap();
        assert!(mise_c(&sums, 1).is_err());
        assert!(mise_v(&sums, 1).is_ok());
    }

    #[test]
    fn vanishing_truth_cells_are_excluded() {
        let truth = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]); 4];
        let est = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]); 4];
        let sums = ErrorSums::integrate(&est, &truth).unwrap();
        assert_eq!(sums.excluded, 8);
        assert_eq!(sums.all, 0.0);
    }

    #[test]
    fn misaligned_paths_are_rejected() {
        let truth = truth_path(2, 10);
        assert!(ErrorSums::integrate(&truth[..9], &truth).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_identity(
            noise in prop::collection::vec(-0.5f64..0.5, 4 * 4 * 20 * 3),
            d in 2usize..=4,
        ) {
            let truth = truth_path(d, 20);
            let mut sums = ErrorSums::default();
            for rep in 0..3 {
                let est: Vec<_> = truth
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let e = DMatrix::from_fn(d, d, |p, q| {
                            let (a, b) = (p.min(q), p.max(q));
                            s[(p, q)] * (1.0 + noise[((rep * 20 + i) * 4 + a) * 4 + b])
                        });
                        e
                    })
                    .collect();
                sums.merge(&ErrorSums::integrate(&est, &truth).unwrap());
            }
            prop_assert!(decomposition_residual(&sums, d).unwrap() < 1e-12);
        }
    }
}
