//! Small dense helpers: row-major vectorisation, Kronecker products and the
//! commutation matrix.
//!
//! Entry `(p, q)` of a `d×d` matrix sits at index `p·d + q` of its
//! vectorisation. All matrices vectorised here are symmetric, so this agrees
//! with column stacking.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn vec_index(d: usize, p: usize, q: usize) -> usize {
    p * d + q
}

pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    DVector::from_fn(d * m.ncols(), |r, _| m[(r / d, r % d)])
}

/// Inverse of [`vectorize`] for a square matrix.
pub fn devectorize(v: &DVector<f64>) -> DMatrix<f64> {
    let d = (v.len() as f64).sqrt().round() as usize;
    assert_eq!(d * d, v.len(), "vector length is not a perfect square");
    DMatrix::from_fn(d, d, |p, q| v[vec_index(d, p, q)])
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |r, c| {
        a[(r / br, c / bc)] * b[(r % br, c % bc)]
    })
}

/// The `d²×d²` commutation matrix `K_d` with `K_d vec(A) = vec(Aᵀ)`.
pub fn commutation(d: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(d * d, d * d);
    for p in 0..d {
        for q in 0..d {
            k[(vec_index(d, p, q), vec_index(d, q, p))] = 1.0;
        }
    }
    k
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
