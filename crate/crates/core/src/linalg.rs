//! Dense linear-algebra helpers shared by the kernels and the sampler.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Diagonal jitter applied once when a factorization fails.
pub const JITTER: f64 = 1e-10;

/// Relative pivot floor below which a factorization is treated as singular.
const PIVOT_FLOOR: f64 = 1e-13;

/// Cholesky factorization without any regularization.
///
/// Fails when a pivot is non-positive or negligible relative to the diagonal
/// scale, which also catches matrices that are singular up to round-off.
pub fn cholesky_strict(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !scale.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(a.clone())?;
    let l = chol.l_dirty();
    let floor = PIVOT_FLOOR * scale.max(f64::MIN_POSITIVE);
    if (0..a.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= floor) {
        return None;
    }
    Some(chol)
}

/// Cholesky factorization that retries once with [`JITTER`] on the diagonal.
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = cholesky_strict(a) {
        return Ok(c);
    }
    let n = a.nrows();
    let mut jittered = a.clone();
    for i in 0..n {
        jittered[(i, i)] += JITTER;
    }
    match Cholesky::new(jittered) {
        Some(c) => {
            warn!("{what}: factorization failed, retried with diagonal jitter {JITTER:e}");
            Ok(c)
        }
        None => Err(Error::NonPositiveDefinite(what.to_string())),
    }
}

/// `log |A|` from a Cholesky factor of `A`.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(a, what)?.inverse();
    Ok(symmetrize(inv))
}

pub fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from `N(Q⁻¹h, Q⁻¹)` given the precision `Q` and linear term `h`.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
    what: &str,
) -> Result<DVector<f64>> {
    let chol = cholesky(precision, what)?;
    Ok(sample_with_precision_factor(&chol, linear, rng))
}

/// Same as [`sample_mvn_precision`] with a precomputed factor of `Q`.
pub fn sample_with_precision_factor<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mean = chol.solve(linear);
    let z = std_normal_vec(linear.len(), rng);
    let dev = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("triangular factor has a non-zero diagonal");
    mean + dev
}

/// Draw from `N(mean, LLᵀ)` given a lower Cholesky factor `L` of the covariance.
pub fn sample_mvn_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    lower: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = std_normal_vec(mean.len(), rng);
    mean + lower * z
}

/// Quadratic form `xᵀ A x`.
pub fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x))
}
