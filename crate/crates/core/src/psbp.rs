//! Spatial probit stick-breaking prior on the loading columns.
//!
//! Each loading column `j` is a mixture over atoms `θ_jl`; cell `c` picks atom
//! `l` with probability `w_jl(c) = Φ(α_jl(c)) ∏_{r<l} Φ(−α_jr(c))`. The stick
//! variables `α_jl` carry the spatial dependence, the atoms carry the
//! multiplicative-gamma shrinkage.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::norm_cdf;
use crate::error::{Error, Result};

/// Mixture truncation: a fixed number of atoms with the last stick closed, or
/// slice-sampled infinite mixtures that instantiate sticks on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truncation {
    Finite(usize),
    Slice,
}

/// Stick-breaking state for one loading column.
///
/// In finite mode there are `L` atoms and `L − 1` sticks; in slice mode every
/// atom has its own stick and the residual mass is never instantiated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StickColumn {
    /// Stick variables, one `mO` vector per stick.
    pub alpha: Vec<Vec<f64>>,
    /// Latent probit variables, same shape as `alpha`.
    pub z: Vec<Vec<f64>>,
    /// Atoms.
    pub theta: Vec<f64>,
    /// Zero-based atom index per cell.
    pub xi: Vec<usize>,
    /// Slice variables per cell (empty in finite mode).
    pub u: Vec<f64>,
}

impl StickColumn {
    pub fn n_atoms(&self) -> usize {
        self.theta.len()
    }

    pub fn n_sticks(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_cells(&self) -> usize {
        self.xi.len()
    }

    fn cell_alpha(&self, cell: usize) -> Vec<f64> {
        self.alpha.iter().map(|a| a[cell]).collect()
    }

    /// Mixture weights of one cell, one per atom.
    pub fn cell_weights(&self, cell: usize, truncation: Truncation) -> Vec<f64> {
        let a = self.cell_alpha(cell);
        match truncation {
            Truncation::Finite(_) => stick_weights(&a),
            Truncation::Slice => open_stick_weights(&a).0,
        }
    }

    /// Mass not assigned to any instantiated atom (zero in finite mode).
    pub fn cell_residual(&self, cell: usize, truncation: Truncation) -> f64 {
        match truncation {
            Truncation::Finite(_) => 0.0,
            Truncation::Slice => self.alpha.iter().map(|a| norm_cdf(-a[cell])).product(),
        }
    }

    /// Weights per atom that sum to one: in slice mode the residual mass is
    /// folded into the last instantiated atom.
    pub fn closed_cell_weights(&self, cell: usize, truncation: Truncation) -> Vec<f64> {
        match truncation {
            Truncation::Finite(_) => self.cell_weights(cell, truncation),
            Truncation::Slice => {
                let n = self.n_sticks();
                if n == 0 {
                    return vec![1.0];
                }
                let a = self.cell_alpha(cell);
                stick_weights(&a[..n - 1])
            }
        }
    }
}

/// Stick-breaking state for all loading columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StickState {
    pub columns: Vec<StickColumn>,
    pub truncation: Truncation,
}

impl StickState {
    pub fn n_factors(&self) -> usize {
        self.columns.len()
    }

    /// Active truncation per column (`L` in finite mode, `L_j*` in slice mode).
    pub fn active_truncation(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.n_atoms()).collect()
    }

    /// Checks the probit/indicator and slice consistency invariants.
    pub fn check_invariants(&self) -> Result<()> {
        for (j, col) in self.columns.iter().enumerate() {
            for cell in 0..col.n_cells() {
                let xi = col.xi[cell];
                if xi >= col.n_atoms() {
                    return Err(Error::IndicatorOutOfRange { factor: j, cell, xi, atoms: col.n_atoms() });
                }
                for r in 0..xi.min(col.n_sticks()) {
                    if !(col.z[r][cell] < 0.0) {
                        return Err(Error::InvariantViolation(format!(
                            "factor {j} cell {cell}: z[{r}] = {} must be negative below xi = {xi}",
                            col.z[r][cell]
                        )));
                    }
                }
                if xi < col.n_sticks() && !(col.z[xi][cell] > 0.0) {
                    return Err(Error::InvariantViolation(format!(
                        "factor {j} cell {cell}: z[xi={xi}] = {} must be positive",
                        col.z[xi][cell]
                    )));
                }
                let w = col.cell_weights(cell, self.truncation);
                let total: f64 = w.iter().sum::<f64>() + col.cell_residual(cell, self.truncation);
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvariantViolation(format!(
                        "factor {j} cell {cell}: weights sum to {total}"
                    )));
                }
                if self.truncation == Truncation::Slice {
                    let u = col.u[cell];
                    if !(u > 0.0 && u < w[xi]) {
                        return Err(Error::InvariantViolation(format!(
                            "factor {j} cell {cell}: slice variable {u} outside (0, {})",
                            w[xi]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Multiplicative-gamma-process state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgpState {
    pub delta: Vec<f64>,
    pub a1: f64,
    pub a2: f64,
}

impl MgpState {
    pub fn precisions(&self) -> Vec<f64> {
        mgp_precisions(&self.delta)
    }
}

/// Closed stick-breaking weights: `L − 1` sticks give `L` weights whose last
/// entry is the leftover product, so the weights sum to one.
pub fn stick_weights(alpha: &[f64]) -> Vec<f64> {
    let (mut w, residual) = open_stick_weights(alpha);
    w.push(residual);
    w
}

/// Open stick-breaking weights: one weight per stick plus the residual mass.
pub fn open_stick_weights(alpha: &[f64]) -> (Vec<f64>, f64) {
    let mut remaining = 1.0;
    let mut w = Vec::with_capacity(alpha.len() + 1);
    for &a in alpha {
        w.push(norm_cdf(a) * remaining);
        remaining *= norm_cdf(-a);
    }
    (w, remaining)
}

/// `τ_j = ∏_{h≤j} δ_h`.
pub fn mgp_precisions(delta: &[f64]) -> Vec<f64> {
    delta
        .iter()
        .scan(1.0, |acc, &d| {
            *acc *= d;
            Some(*acc)
        })
        .collect()
}

/// Loading matrix `λ_j(c) = θ_{j, ξ_j(c)}`, `mO × k`.
pub fn loadings_from_atoms(state: &StickState) -> Result<DMatrix<f64>> {
    let k = state.n_factors();
    let cells = state.columns.first().map_or(0, |c| c.n_cells());
    let mut out = DMatrix::zeros(cells, k);
    for (j, col) in state.columns.iter().enumerate() {
        for (cell, &xi) in col.xi.iter().enumerate() {
            let theta = col.theta.get(xi).ok_or(Error::IndicatorOutOfRange {
                factor: j,
                cell,
                xi,
                atoms: col.n_atoms(),
            })?;
            out[(cell, j)] = *theta;
        }
    }
    Ok(out)
}

/// Smallest `L` per cell with cumulative weight above `1 − u_min`, maximised
/// over cells. `None` means some weight stream is too short and must be
/// extended before the truncation is defined.
pub fn slice_truncation(weights: &[Vec<f64>], u_min: f64) -> Option<usize> {
    let target = 1.0 - u_min;
    let mut best = 0;
    for stream in weights {
        let mut cum = 0.0;
        let pos = stream.iter().position(|w| {
            cum += w;
            cum > target
        })?;
        best = best.max(pos + 1);
    }
    Some(best)
}

/// `β₁ = E[Φ(α)]` for `α ~ N(μ, σ²)`, i.e. `P(T > 0)` with `T ~ N(μ, 1 + σ²)`.
pub fn beta_moment_1(mu: f64, sigma2: f64) -> f64 {
    norm_cdf(mu / (1.0 + sigma2).sqrt())
}

/// `β₂ = E[Φ(α₁)Φ(α₂)]` for `(α₁, α₂) ~ N(μ, Σ)`: the orthant probability
/// `P(T₁ > 0, T₂ > 0)` with `T ~ N(μ, Σ + I)`.
pub fn beta_moment_2(mu: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let s1 = (1.0 + cov[0][0]).sqrt();
    let s2 = (1.0 + cov[1][1]).sqrt();
    let r = (cov[0][1] / (s1 * s2)).clamp(-1.0, 1.0);
    bivariate_upper(-mu[0] / s1, -mu[1] / s2, r)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`.
///
/// Genz's method: Gauss–Legendre quadrature of Plackett's identity for
/// moderate correlation, and of the Drezner–Wesolowsky expansion near ±1.
pub fn bivariate_upper(h: f64, k: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    let (x, w) = gauss_legendre(20);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for (xi, wi) in x.iter().zip(&w) {
            let sn = (asr * (1.0 + xi) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / (4.0 * PI) + norm_cdf(-h) * norm_cdf(-k);
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * (2.0 * PI).sqrt()
                    * norm_cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (xi, wi) in x.iter().zip(&w) {
                let xs = (a * (1.0 + xi)).powi(2);
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * wi
                    * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            }
            bvn = -bvn / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                bvn += if h < 0.0 { norm_cdf(k) - norm_cdf(h) } else { norm_cdf(-h) - norm_cdf(-k) };
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// `β₂(1 − q^L)/(1 − q)` with `q = 1 − β₁ − β₁' + β₂`; `L = None` is the
/// infinite-mixture limit.
pub fn stick_bracket(beta1: f64, beta1_other: f64, beta2: f64, l: Option<usize>) -> Result<f64> {
    let denom = beta1 + beta1_other - beta2;
    if denom.abs() < 1e-15 {
        return Err(Error::DegenerateDenominator);
    }
    let q = 1.0 - denom;
    let geometric = match l {
        Some(l) => 1.0 - q.powi(l as i32),
        None => 1.0,
    };
    Ok(beta2 * geometric / denom)
}

/// Variance of `G(B)` at one cell.
pub fn psbp_process_variance(g0b: f64, beta1: f64, beta2: f64, l: Option<usize>) -> Result<f64> {
    if !(0.0..=1.0).contains(&g0b) {
        return Err(Error::InvalidParameter(format!("G0(B) = {g0b} outside [0, 1]")));
    }
    if g0b == 0.0 || g0b == 1.0 {
        return Ok(0.0);
    }
    Ok(g0b * (1.0 - g0b) * stick_bracket(beta1, beta1, beta2, l)?)
}

/// Covariance of `G(B)` between two cells.
pub fn psbp_process_covariance(
    g0b: f64,
    beta1: (f64, f64),
    beta2_cross: f64,
    l: Option<usize>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&g0b) {
        return Err(Error::InvalidParameter(format!("G0(B) = {g0b} outside [0, 1]")));
    }
    if g0b == 0.0 || g0b == 1.0 {
        return Ok(0.0);
    }
    Ok(g0b * (1.0 - g0b) * stick_bracket(beta1.0, beta1.1, beta2_cross, l)?)
}

/// Marginal variance (`same_cell`) or covariance of `Y_t` between two cells.
#[allow(clippy::too_many_arguments)]
pub fn marginal_y_covariance(
    beta1: (f64, f64),
    beta2: f64,
    l: Option<usize>,
    tau: &[f64],
    eta2_expect: &[f64],
    sigma2_expect: f64,
    same_cell: bool,
) -> Result<f64> {
    if tau.len() != eta2_expect.len() {
        return Err(Error::DimensionMismatch("tau and E[eta^2] lengths differ".into()));
    }
    if tau.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter("atom precisions must be positive".into()));
    }
    let scale: f64 = tau.iter().zip(eta2_expect).map(|(t, e)| e / t).sum();
    let noise = if same_cell { sigma2_expect } else { 0.0 };
    if tau.is_empty() {
        return Ok(noise);
    }
    let bracket = if same_cell {
        stick_bracket(beta1.0, beta1.0, beta2, l)?
    } else {
        stick_bracket(beta1.0, beta1.1, beta2, l)?
    };
    Ok(noise + bracket * scale)
}
