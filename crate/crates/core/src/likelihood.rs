//! Gaussian and binomial observation models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::data::ObservationSet;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    pub family: Family,
}

impl LikelihoodSpec {
    pub fn new(family: Family) -> Self {
        Self { family }
    }

    pub fn link(&self) -> Link {
        match self.family {
            Family::Gaussian => Link::Identity,
            Family::Binomial => Link::Logit,
        }
    }

    /// Inverse link `g⁻¹(ϑ)`.
    pub fn mean(&self, theta: f64) -> f64 {
        match self.family {
            Family::Gaussian => theta,
            Family::Binomial => logistic(theta),
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pólya-Gamma augmentation state, `mO × T` each.
#[derive(Clone, Debug, PartialEq)]
pub struct PgAugmentation {
    pub omega: DMatrix<f64>,
    pub chi: DMatrix<f64>,
    pub ystar: DMatrix<f64>,
}

/// `ϑ_t = X_t β + Λ η_t`.
pub fn linear_predictor(
    beta: &DVector<f64>,
    loadings: &DMatrix<f64>,
    eta_t: &DVector<f64>,
    x_t: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if x_t.ncols() != beta.len() || loadings.ncols() != eta_t.len() || x_t.nrows() != loadings.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X_t is {}x{}, beta has {}, Lambda is {}x{}, eta_t has {}",
            x_t.nrows(),
            x_t.ncols(),
            beta.len(),
            loadings.nrows(),
            loadings.ncols(),
            eta_t.len()
        )));
    }
    Ok(x_t * beta + loadings * eta_t)
}

/// Log density of one observation. `trials` is ignored for the Gaussian family
/// and `sigma2` for the binomial.
pub fn cell_log_likelihood(family: Family, y: f64, trials: f64, theta: f64, sigma2: f64) -> f64 {
    match family {
        Family::Gaussian => {
            let r = y - theta;
            -0.5 * (LN_2PI + sigma2.ln() + r * r / sigma2)
        }
        Family::Binomial => {
            let n = trials.round() as u64;
            let k = y.round() as u64;
            theta * y - trials * softplus(theta) + ln_binomial(n, k)
        }
    }
}

/// Log likelihood of time `t` at predictor `theta_t`, summed over observed cells.
pub fn log_likelihood(
    spec: &LikelihoodSpec,
    data: &ObservationSet,
    t: usize,
    theta_t: &DVector<f64>,
    sigma2: f64,
) -> Result<f64> {
    if theta_t.len() != data.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "predictor has {} entries, expected {}",
            theta_t.len(),
            data.n_cells()
        )));
    }
    if spec.family == Family::Gaussian && !(sigma2 > 0.0) {
        return Err(Error::NonPositiveVariance(format!("sigma2 = {sigma2}")));
    }
    if spec.family == Family::Binomial && data.trials.is_none() {
        return Err(Error::MissingTrials);
    }
    let mut total = 0.0;
    for c in 0..data.n_cells() {
        if !data.is_observed(c, t) {
            continue;
        }
        let n = data.trials.as_ref().map_or(0.0, |m| m[(c, t)]);
        total += cell_log_likelihood(spec.family, data.y[(c, t)], n, theta_t[c], sigma2);
    }
    Ok(total)
}

/// `χ = y − n/2`, `Y* = χ/ω`.
pub fn pg_transform(y: f64, n: f64, omega: f64) -> Result<(f64, f64)> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveOmega(omega));
    }
    let chi = y - 0.5 * n;
    Ok((chi, chi / omega))
}

/// Per-observation Gaussian working kernel `b·ϑ − prec·ϑ²/2`, which is what the
/// conjugate updates consume.
///
/// Gaussian cells give `prec = 1/σ²`, `b = y/σ²`; binomial cells give
/// `prec = ω`, `b = χ`. Missing cells and zero-trial cells contribute nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkingKernel {
    pub prec: DMatrix<f64>,
    pub lin: DMatrix<f64>,
}

impl WorkingKernel {
    pub fn gaussian(data: &ObservationSet, sigma2: &DVector<f64>) -> Self {
        let (rows, cols) = data.y.shape();
        let mut prec = DMatrix::zeros(rows, cols);
        let mut lin = DMatrix::zeros(rows, cols);
        for t in 0..cols {
            for c in 0..rows {
                if data.is_observed(c, t) {
                    prec[(c, t)] = 1.0 / sigma2[c];
                    lin[(c, t)] = data.y[(c, t)] / sigma2[c];
                }
            }
        }
        Self { prec, lin }
    }

    pub fn binomial(data: &ObservationSet, omega: &DMatrix<f64>) -> Self {
        let (rows, cols) = data.y.shape();
        let trials = data.trials.as_ref().expect("binomial data carries trials");
        let mut prec = DMatrix::zeros(rows, cols);
        let mut lin = DMatrix::zeros(rows, cols);
        for t in 0..cols {
            for c in 0..rows {
                if data.is_observed(c, t) && trials[(c, t)] > 0.0 {
                    prec[(c, t)] = omega[(c, t)];
                    lin[(c, t)] = data.y[(c, t)] - 0.5 * trials[(c, t)];
                }
            }
        }
        Self { prec, lin }
    }

    /// Working response `b/prec`, zero where `prec = 0`.
    pub fn response(&self, c: usize, t: usize) -> f64 {
        let p = self.prec[(c, t)];
        if p > 0.0 {
            self.lin[(c, t)] / p
        } else {
            0.0
        }
    }
}
