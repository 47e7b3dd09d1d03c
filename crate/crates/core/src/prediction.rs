//! Posterior predictive sampling at future visit times by composition: for each
//! retained draw, future factors from their conditional Gaussian given the
//! observed factors, then observations from the likelihood.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::fmt_f64;
use crate::draws::{Draw, PosteriorDraws};
use crate::error::{Error, Result};
use crate::kernels::{temporal_matrix, TemporalKernel, TemporalKernelSpec};
use crate::likelihood::{logistic, Family};
use crate::linalg;

/// Future times and inputs for predictive sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct PpdRequest {
    /// Strictly increasing, all after the last observed time.
    pub new_times: Vec<f64>,
    /// One `mO × p` design matrix per new time; `None` means no covariates
    /// (only valid when `p = 0`).
    pub new_covariates: Option<Vec<DMatrix<f64>>>,
    /// Binomial trials per cell at every new time.
    pub trials: Option<DVector<f64>>,
}

/// `H⁺ = H_{new,old} H_{old,old}⁻¹` and `H* = H_{new,new} − H⁺ H_{old,new}`.
pub fn conditional_time_operators(
    kind: TemporalKernel,
    psi: f64,
    times: &[f64],
    new_times: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_new_times(times, new_times)?;
    let all: Vec<f64> = times.iter().chain(new_times).copied().collect();
    let h = temporal_matrix(&TemporalKernelSpec { kind, psi }, &all)?;
    let (t, n) = (times.len(), new_times.len());
    let h_oo = h.view((0, 0), (t, t)).into_owned();
    let h_no = h.view((t, 0), (n, t)).into_owned();
    let h_nn = h.view((t, t), (n, n)).into_owned();
    let chol = linalg::cholesky_strict(&h_oo)
        .ok_or_else(|| Error::NonPositiveDefinite(format!("H({psi}) over observed times")))?;
    // H⁺ = H_no H_oo⁻¹ = (H_oo⁻¹ H_on)ᵀ
    let h_plus = chol.solve(&h_no.transpose()).transpose();
    let h_star = linalg::symmetrize(&h_nn - &h_plus * h_no.transpose());
    Ok((h_plus, h_star))
}

fn check_new_times(times: &[f64], new_times: &[f64]) -> Result<()> {
    let last = *times.last().ok_or_else(|| Error::PreconditionViolation("no observed times".into()))?;
    if new_times.is_empty() {
        return Err(Error::PreconditionViolation("no new times requested".into()));
    }
    let mut prev = last;
    for &x in new_times {
        if !(x > prev) {
            return Err(Error::PreconditionViolation(format!(
                "new time {x} must be strictly after {prev}"
            )));
        }
        prev = x;
    }
    Ok(())
}

/// Mean `(H⁺ ⊗ I)η` (stacked time-outer, length `T_new·k`) and covariance `H* ⊗ Υ`.
pub fn conditional_factor_moments(
    kind: TemporalKernel,
    psi: f64,
    eta: &DMatrix<f64>,
    upsilon: &DMatrix<f64>,
    times: &[f64],
    new_times: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (h_plus, h_star) = conditional_time_operators(kind, psi, times, new_times)?;
    let mean_mat = &h_plus * eta;
    let k = eta.ncols();
    let mean = DVector::from_fn(new_times.len() * k, |i, _| mean_mat[(i / k, i % k)]);
    Ok((mean, linalg::kron(&h_star, upsilon)))
}

/// Predictive draws: one `mO × T_new` matrix per retained draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PpdDraws {
    pub new_times: Vec<f64>,
    pub n_locations: usize,
    pub values: Vec<DMatrix<f64>>,
    /// Success probabilities (binomial only).
    pub prob: Option<Vec<DMatrix<f64>>>,
}

impl PpdDraws {
    /// Posterior-mean value per cell and new time.
    pub fn mean(&self) -> DMatrix<f64> {
        let n = self.values.len() as f64;
        self.values.iter().fold(DMatrix::zeros(self.values[0].nrows(), self.values[0].ncols()), |a, v| a + v) / n
    }

    /// Draws of one cell at one new time.
    pub fn samples(&self, cell: usize, t: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[(cell, t)]).collect()
    }

    /// `draw,time_value,type_id,location_id,value[,prob]`, one-based draw and ids.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["draw", "time_value", "type_id", "location_id", "value"];
        if self.prob.is_some() {
            header.push("prob");
        }
        w.write_record(&header)?;
        for (s, v) in self.values.iter().enumerate() {
            for (t, &x) in self.new_times.iter().enumerate() {
                for c in 0..v.nrows() {
                    let mut row = vec![
                        (s + 1).to_string(),
                        fmt_f64(x),
                        (c / self.n_locations + 1).to_string(),
                        (c % self.n_locations + 1).to_string(),
                        fmt_f64(v[(c, t)]),
                    ];
                    if let Some(p) = &self.prob {
                        row.push(fmt_f64(p[s][(c, t)]));
                    }
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn sample_one(
    draws: &PosteriorDraws,
    d: &Draw,
    req: &PpdRequest,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    let meta = &draws.meta;
    let (mean, cov) =
        conditional_factor_moments(meta.temporal_kernel, d.psi, &d.eta, &d.upsilon, &meta.times, &req.new_times)?;
    let n_new = req.new_times.len();
    let k = meta.k;
    let eta_new = if k == 0 {
        DVector::zeros(0)
    } else {
        // H* can be numerically semi-definite for near-duplicate times
        let chol = linalg::cholesky(&cov, "predictive factor covariance")?;
        let z = linalg::std_normal_vec(n_new * k, rng);
        mean + chol.l() * z
    };
    let cells = meta.n_cells();
    let mut values = DMatrix::zeros(cells, n_new);
    let mut prob = (meta.family == Family::Binomial).then(|| DMatrix::zeros(cells, n_new));
    for t in 0..n_new {
        let eta_t = eta_new.rows(t * k, k).into_owned();
        let mut pred = &d.lambda * eta_t;
        if let Some(x) = &req.new_covariates {
            pred += &x[t] * &d.beta;
        }
        for c in 0..cells {
            match meta.family {
                Family::Gaussian => {
                    values[(c, t)] = pred[c] + d.sigma2[c].sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
                Family::Binomial => {
                    let p = logistic(pred[c]);
                    let n = req.trials.as_ref().ok_or(Error::MissingTrials)?[c].round() as u64;
                    let b = Binomial::new(n, p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                    values[(c, t)] = b.sample(rng) as f64;
                    prob.as_mut().expect("binomial")[(c, t)] = p;
                }
            }
        }
    }
    Ok((values, prob))
}

/// Composition sampling over all retained draws. Draw `s` uses its own rng
/// stream derived from `seed`, so the output does not depend on thread count.
pub fn ppd_sample(draws: &PosteriorDraws, req: &PpdRequest, seed: u64) -> Result<PpdDraws> {
    if draws.is_empty() {
        return Err(Error::DegenerateDraws(0));
    }
    check_new_times(&draws.meta.times, &req.new_times)?;
    let cells = draws.meta.n_cells();
    match &req.new_covariates {
        Some(x) => {
            if x.len() != req.new_times.len() || x.iter().any(|m| m.nrows() != cells || m.ncols() != draws.meta.p) {
                return Err(Error::DimensionMismatch("one mO × p design matrix per new time required".into()));
            }
        }
        None if draws.meta.p > 0 => {
            return Err(Error::PreconditionViolation("covariates are required for new times".into()))
        }
        None => {}
    }
    if draws.meta.family == Family::Binomial {
        match &req.trials {
            Some(n) if n.len() == cells => {}
            Some(_) => return Err(Error::DimensionMismatch("one trial count per cell required".into())),
            None => return Err(Error::MissingTrials),
        }
    }
    let results: Vec<Result<(DMatrix<f64>, Option<DMatrix<f64>>)>> = draws
        .draws
        .par_iter()
        .enumerate()
        .map(|(s, d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            sample_one(draws, d, req, &mut rng)
        })
        .collect();
    let mut values = Vec::with_capacity(results.len());
    let mut probs = Vec::new();
    for r in results {
        let (v, p) = r?;
        values.push(v);
        if let Some(p) = p {
            probs.push(p);
        }
    }
    Ok(PpdDraws {
        new_times: req.new_times.clone(),
        n_locations: draws.meta.n_locations,
        values,
        prob: (draws.meta.family == Family::Binomial).then_some(probs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draws::DrawsMeta;
    use crate::model::{LoadingsPrior, Shrinkage};
    use crate::psbp::Truncation;
    use approx::assert_abs_diff_eq;

    fn meta(family: Family, k: usize, cells: usize) -> DrawsMeta {
        DrawsMeta {
            n_locations: cells,
            n_types: 1,
            times: vec![0.0, 1.0, 2.0],
            k,
            p: 0,
            family,
            temporal_kernel: TemporalKernel::Ar1,
            loadings_prior: LoadingsPrior::GaussianIid,
            shrinkage: Shrinkage::IndependentGamma,
            truncation: Truncation::Slice,
            observed: vec![],
        }
    }

    fn draw(k: usize, cells: usize, sigma2: f64) -> Draw {
        Draw {
            chain: 0,
            iteration: 1,
            beta: DVector::zeros(0),
            eta: DMatrix::from_element(3, k, 0.5),
            lambda: DMatrix::zeros(cells, k),
            theta: vec![],
            xi: vec![],
            alpha: vec![],
            delta: vec![1.0; k],
            kappa: DMatrix::identity(1, 1),
            rho: 0.99,
            psi: 0.6,
            upsilon: DMatrix::identity(k, k),
            sigma2: DVector::from_element(cells, sigma2),
        }
    }

    #[test]
    fn ar1_screening_identity() {
        let eta = DMatrix::from_row_slice(4, 2, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]);
        let times = [1.0, 2.0, 3.0, 4.0];
        let (mean, _) =
            conditional_factor_moments(TemporalKernel::Ar1, 0.7, &eta, &DMatrix::identity(2, 2), &times, &[5.0]).unwrap();
        assert_abs_diff_eq!(mean[0], 0.7 * 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(mean[1], 0.7 * -0.8, epsilon = 1e-10);
    }

    #[test]
    fn independent_times_give_prior() {
        let eta = DMatrix::from_element(3, 2, 1.3);
        let ups = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (mean, cov) =
            conditional_factor_moments(TemporalKernel::Ar1, 0.0, &eta, &ups, &[0.0, 1.0, 2.0], &[3.0]).unwrap();
        assert!(mean.iter().all(|v| v.abs() < 1e-15));
        assert!((cov - ups).abs().max() < 1e-15);
    }

    #[test]
    fn new_time_must_follow_last() {
        let eta = DMatrix::zeros(3, 1);
        let r = conditional_factor_moments(TemporalKernel::Ar1, 0.5, &eta, &DMatrix::identity(1, 1), &[0.0, 1.0, 2.0], &[2.0]);
        assert!(matches!(r, Err(Error::PreconditionViolation(_))));
    }

    #[test]
    fn gaussian_noise_only_ppd() {
        let mut pd = PosteriorDraws::new(meta(Family::Gaussian, 1, 2));
        for _ in 0..10_000 {
            pd.draws.push(draw(1, 2, 2.0));
        }
        let req = PpdRequest { new_times: vec![3.0], new_covariates: None, trials: None };
        let out = ppd_sample(&pd, &req, 5).unwrap();
        let x = out.samples(1, 0);
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m.abs() < 3.0 * (2.0 / n).sqrt());
        // variance SE for a normal: σ²·√(2/(n−1))
        assert!((v - 2.0).abs() < 3.0 * 2.0 * (2.0 / (n - 1.0)).sqrt());
        assert_eq!(out, ppd_sample(&pd, &req, 5).unwrap());
    }

    #[test]
    fn binomial_half_probability() {
        let mut pd = PosteriorDraws::new(meta(Family::Binomial, 1, 1));
        for _ in 0..10_000 {
            pd.draws.push(draw(1, 1, 1.0));
        }
        let req = PpdRequest { new_times: vec![3.0], new_covariates: None, trials: Some(DVector::from_element(1, 1.0)) };
        let out = ppd_sample(&pd, &req, 2).unwrap();
        let x = out.samples(0, 0);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        assert!((m - 0.5).abs() < 3.0 * (0.25 / x.len() as f64).sqrt());
        assert!(out.prob.as_ref().unwrap().iter().all(|p| p[(0, 0)] == 0.5));
        let mut csv = Vec::new();
        out.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("draw,time_value,type_id,location_id,value,prob\n"));
    }
}
