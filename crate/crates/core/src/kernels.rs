//! Spatial correlation `F(ρ)` and temporal correlation `H(ψ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SpatialStructure;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialKernel {
    /// Proper CAR: `F(ρ)⁻¹ = D_w − ρW`.
    Car,
    /// Exponential Gaussian-process correlation `exp{−ρD}`.
    ExponentialGp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernelSpec {
    pub kind: SpatialKernel,
    pub rho: f64,
}

impl SpatialKernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SpatialKernel::Car if !(0.0..=1.0).contains(&self.rho) => {
                Err(Error::InvalidParameter(format!("CAR requires 0 <= rho < 1, got {}", self.rho)))
            }
            SpatialKernel::ExponentialGp if !(self.rho > 0.0) => {
                Err(Error::InvalidParameter(format!("exponential GP requires rho > 0, got {}", self.rho)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalKernel {
    /// `ψ^{|x_t − x_t'|}`.
    Ar1,
    /// `exp{−ψ|x_t − x_t'|}`.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalKernelSpec {
    pub kind: TemporalKernel,
    pub psi: f64,
}

fn check_kind(spec: &SpatialKernelSpec, structure: &SpatialStructure) -> Result<()> {
    match (spec.kind, structure) {
        (SpatialKernel::Car, SpatialStructure::Areal { .. })
        | (SpatialKernel::ExponentialGp, SpatialStructure::Point { .. }) => Ok(()),
        (k, _) => Err(Error::KindMismatch(format!("{k:?} kernel does not match the spatial structure"))),
    }
}

/// Spatial precision `F(ρ)⁻¹`. For CAR this is `D_w − ρW` without inversion.
pub fn spatial_precision(spec: &SpatialKernelSpec, structure: &SpatialStructure) -> Result<DMatrix<f64>> {
    check_kind(spec, structure)?;
    spec.validate()?;
    match structure {
        SpatialStructure::Areal { adjacency } => {
            let deg = structure.degrees().expect("areal structure has degrees");
            let mut q = adjacency * (-spec.rho);
            for i in 0..q.nrows() {
                q[(i, i)] = deg[i];
            }
            if linalg::cholesky_strict(&q).is_none() {
                return Err(Error::SingularPrecision);
            }
            Ok(q)
        }
        SpatialStructure::Point { .. } => {
            let f = spatial_correlation(spec, structure)?;
            linalg::spd_inverse(&f, "exponential spatial correlation")
        }
    }
}

/// Spatial correlation `F(ρ)`.
pub fn spatial_correlation(spec: &SpatialKernelSpec, structure: &SpatialStructure) -> Result<DMatrix<f64>> {
    check_kind(spec, structure)?;
    spec.validate()?;
    match structure {
        SpatialStructure::Areal { .. } => {
            let q = spatial_precision(spec, structure)?;
            let chol = linalg::cholesky_strict(&q).ok_or(Error::SingularPrecision)?;
            Ok(linalg::symmetrize(chol.inverse()))
        }
        SpatialStructure::Point { distances } => Ok(distances.map(|d| (-spec.rho * d).exp())),
    }
}

/// `ψ^d`, defined for negative `ψ` only at integer lags.
fn ar1_entry(psi: f64, lag: f64) -> Result<f64> {
    if lag == 0.0 {
        return Ok(1.0);
    }
    if psi >= 0.0 {
        return Ok(psi.powf(lag));
    }
    if lag.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "negative AR(1) coefficient {psi} requires integer time gaps, got {lag}"
        )));
    }
    Ok(psi.powi(lag as i32))
}

/// Unchecked temporal correlation matrix over `times`.
pub fn temporal_matrix(spec: &TemporalKernelSpec, times: &[f64]) -> Result<DMatrix<f64>> {
    let n = times.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let lag = (times[i] - times[j]).abs();
            h[(i, j)] = match spec.kind {
                TemporalKernel::Ar1 => ar1_entry(spec.psi, lag)?,
                TemporalKernel::Exponential => (-spec.psi * lag).exp(),
            };
        }
    }
    Ok(h)
}

/// Temporal correlation `H(ψ)`; fails if it is not positive definite.
pub fn temporal_correlation(spec: &TemporalKernelSpec, times: &DVector<f64>) -> Result<DMatrix<f64>> {
    if times.iter().zip(times.iter().skip(1)).any(|(a, b)| !(b > a)) {
        return Err(Error::NonIncreasingTimes("temporal kernel times".into()));
    }
    match spec.kind {
        TemporalKernel::Ar1 if !(spec.psi.abs() < 1.0) => {
            return Err(Error::InvalidParameter(format!("AR(1) requires |psi| < 1, got {}", spec.psi)))
        }
        TemporalKernel::Exponential if spec.psi < 0.0 => {
            return Err(Error::InvalidParameter(format!("exponential kernel requires psi > 0, got {}", spec.psi)))
        }
        _ => {}
    }
    let h = temporal_matrix(spec, times.as_slice())?;
    if linalg::cholesky_strict(&h).is_none() {
        return Err(Error::NonPositiveDefinite(format!("H({}) is not positive definite", spec.psi)));
    }
    Ok(h)
}

/// Correlation targets for the exponential-kernel `ψ` prior bounds.
pub const PSI_LOWER_CORRELATION: f64 = 0.95;
pub const PSI_UPPER_CORRELATION: f64 = 0.01;

/// Uniform prior bounds for an exponential decay parameter: correlation 0.95 at
/// the largest gap and 0.01 at the smallest gap.
pub fn decay_bounds(min_gap: f64, max_gap: f64) -> Result<(f64, f64)> {
    if !(min_gap > 0.0) {
        return Err(Error::DuplicateTimes);
    }
    let a = -PSI_LOWER_CORRELATION.ln() / max_gap;
    let b = -PSI_UPPER_CORRELATION.ln() / min_gap;
    Ok((a, b))
}

/// `(a_ψ, b_ψ)` from the smallest and largest differences between visit times.
pub fn psi_bounds(times: &[f64]) -> Result<(f64, f64)> {
    if times.len() < 2 {
        return Err(Error::InvalidData("psi bounds need at least two visit times".into()));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let max_gap = sorted[sorted.len() - 1] - sorted[0];
    decay_bounds(min_gap, max_gap)
}

/// Prior bounds for an exponential-GP `ρ` from the pairwise distances.
pub fn rho_bounds(distances: &DMatrix<f64>) -> Result<(f64, f64)> {
    let off: Vec<f64> = (0..distances.nrows())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| distances[(i, j)])
        .collect();
    if off.is_empty() {
        return Err(Error::InvalidData("rho bounds need at least two locations".into()));
    }
    let min = off.iter().copied().fold(f64::INFINITY, f64::min);
    let max = off.iter().copied().fold(0.0, f64::max);
    decay_bounds(min, max)
}
