//! Gibbs sampler over all model unknowns.
//!
//! One sweep visits, in order: Pólya-Gamma variables (binomial), the loadings
//! block, latent factors, regression coefficients, observation variances,
//! `κ`, `Υ`, the column precisions, then `ρ` and `ψ` by adaptive Metropolis.

mod loadings;
mod metropolis;
mod state;

use std::io::{BufRead, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationSet, SpatialStructure};
use crate::dist::{gamma, inv_gamma, inv_wishart, normal_negative, normal_positive, uniform_open};
use crate::draws::{Acceptance, Draw, DrawsMeta, PosteriorDraws};
use crate::error::{Error, Result};
use crate::kernels::{spatial_correlation, spatial_precision, temporal_correlation, SpatialKernel, SpatialKernelSpec, TemporalKernelSpec};
use crate::likelihood::{cell_log_likelihood, Family, WorkingKernel};
use crate::linalg::{self, cholesky, kron, log_det, sample_with_precision_factor};
use crate::model::{ModelSpec, ResolvedHyper, Shrinkage};
use crate::pg::pg_sample;
use crate::psbp::{mgp_precisions, MgpState, StickColumn, StickState, Truncation};

pub use state::{ChainState, MhTuner, Tuning, TARGET_ACCEPTANCE};

/// Upper bound on instantiated sticks per column in slice mode.
pub const MAX_STICKS: usize = 200;

/// Checkpoint format version written in the header line.
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &str = "spfactor-checkpoint";

/// Iteration settings of one chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.burn_in {
            return Err(Error::PreconditionViolation(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::PreconditionViolation("thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Factorizations that depend only on `ρ` and `ψ`.
#[derive(Clone, Debug)]
struct Cache {
    /// `F(ρ)⁻¹`, identity when the loadings prior is not spatial.
    f_prec: DMatrix<f64>,
    f_logdet: f64,
    h_inv: DMatrix<f64>,
    h_logdet: f64,
}

/// A single chain: model, data, state and random stream.
pub struct Sampler {
    pub spec: ModelSpec,
    pub data: ObservationSet,
    pub hyper: ResolvedHyper,
    pub state: ChainState,
    pub rng: ChaCha8Rng,
    /// Sweeps below this count adapt the Metropolis proposals.
    pub burn_in: usize,
    cache: Cache,
}

/// Rng for `chain` derived from the master seed.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn spatial_factors(spec: &ModelSpec, spatial: &SpatialStructure, rho: f64) -> Result<(DMatrix<f64>, f64)> {
    let m = spatial.n_locations();
    if !spec.loadings_prior.is_spatial() {
        return Ok((DMatrix::identity(m, m), 0.0));
    }
    let kspec = SpatialKernelSpec { kind: spec.spatial_kernel, rho };
    match spec.spatial_kernel {
        SpatialKernel::Car => {
            let q = spatial_precision(&kspec, spatial)?;
            let chol = linalg::cholesky_strict(&q).ok_or(Error::SingularPrecision)?;
            Ok((q, -log_det(&chol)))
        }
        SpatialKernel::ExponentialGp => {
            let f = spatial_correlation(&kspec, spatial)?;
            let chol = linalg::cholesky_strict(&f)
                .ok_or_else(|| Error::NonPositiveDefinite(format!("F({rho}) is not positive definite")))?;
            let logdet = log_det(&chol);
            Ok((linalg::symmetrize(chol.inverse()), logdet))
        }
    }
}

fn temporal_factors(spec: &ModelSpec, times: &DVector<f64>, psi: f64) -> Result<(DMatrix<f64>, f64)> {
    let h = temporal_correlation(&TemporalKernelSpec { kind: spec.temporal_kernel, psi }, times)?;
    let chol = linalg::cholesky_strict(&h)
        .ok_or_else(|| Error::NonPositiveDefinite(format!("H({psi}) is not positive definite")))?;
    let logdet = log_det(&chol);
    Ok((linalg::symmetrize(chol.inverse()), logdet))
}

impl Sampler {
    /// Validates inputs and draws an initial state from the priors.
    pub fn new(spec: &ModelSpec, data: &ObservationSet, seed: u64, chain: usize) -> Result<Self> {
        let rng = chain_rng(seed, chain);
        Self::with_rng(spec, data, rng)
    }

    pub fn with_rng(spec: &ModelSpec, data: &ObservationSet, mut rng: ChaCha8Rng) -> Result<Self> {
        data.validate(spec.likelihood.family)?;
        let hyper = spec.resolve(data.n_types, &data.times, &data.spatial)?;
        let state = init_state(spec, data, &hyper, &mut rng)?;
        let (f_prec, f_logdet) = spatial_factors(spec, &data.spatial, state.rho)?;
        let (h_inv, h_logdet) = temporal_factors(spec, &data.times, state.psi)?;
        Ok(Sampler {
            spec: spec.clone(),
            data: data.clone(),
            hyper,
            state,
            rng,
            burn_in: 0,
            cache: Cache { f_prec, f_logdet, h_inv, h_logdet },
        })
    }

    /// Rebuilds a sampler from a checkpointed state and rng.
    pub fn resume(spec: &ModelSpec, data: &ObservationSet, checkpoint: Checkpoint) -> Result<Self> {
        data.validate(spec.likelihood.family)?;
        let hyper = spec.resolve(data.n_types, &data.times, &data.spatial)?;
        let (f_prec, f_logdet) = spatial_factors(spec, &data.spatial, checkpoint.state.rho)?;
        let (h_inv, h_logdet) = temporal_factors(spec, &data.times, checkpoint.state.psi)?;
        Ok(Sampler {
            spec: spec.clone(),
            data: data.clone(),
            hyper,
            state: checkpoint.state,
            rng: checkpoint.rng,
            burn_in: checkpoint.burn_in,
            cache: Cache { f_prec, f_logdet, h_inv, h_logdet },
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { state: self.state.clone(), rng: self.rng.clone(), burn_in: self.burn_in }
    }

    /// Replaces the observations (same shapes), e.g. for successive-conditional checks.
    pub fn set_observations(&mut self, y: DMatrix<f64>) -> Result<()> {
        if y.shape() != self.data.y.shape() {
            return Err(Error::DimensionMismatch("replacement observations differ in shape".into()));
        }
        self.data.y = y;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    fn n_times(&self) -> usize {
        self.data.n_times()
    }

    fn tau(&self) -> Vec<f64> {
        match self.spec.shrinkage {
            Shrinkage::Mgp => mgp_precisions(&self.state.mgp.delta),
            Shrinkage::IndependentGamma => self.state.mgp.delta.clone(),
        }
    }

    /// `X_t β` for every visit as an `mO × T` matrix.
    fn regression_part(&self) -> DMatrix<f64> {
        let (cells, t_len) = (self.data.n_cells(), self.n_times());
        let mut out = DMatrix::zeros(cells, t_len);
        if self.state.beta.is_empty() {
            return out;
        }
        for t in 0..t_len {
            out.set_column(t, &(&self.data.covariates[t] * &self.state.beta));
        }
        out
    }

    /// `ϑ` for every visit as an `mO × T` matrix.
    pub fn predictor(&self) -> DMatrix<f64> {
        self.regression_part() + &self.state.lambda * self.state.eta.transpose()
    }

    pub fn working_kernel(&self) -> WorkingKernel {
        match self.spec.likelihood.family {
            Family::Gaussian => WorkingKernel::gaussian(&self.data, &self.state.sigma2),
            Family::Binomial => {
                WorkingKernel::binomial(&self.data, self.state.omega.as_ref().expect("binomial state has omega"))
            }
        }
    }

    /// `κ⁻¹ ⊗ F(ρ)⁻¹`.
    fn prior_precision(&self) -> Result<DMatrix<f64>> {
        let kappa_inv = linalg::spd_inverse(&self.state.kappa, "kappa")?;
        Ok(kron(&kappa_inv, &self.cache.f_prec))
    }

    /// `ω ~ PG(n, ϑ)` elementwise; zero for missing or zero-trial cells.
    pub fn update_polya_gamma(&mut self) -> Result<()> {
        if self.spec.likelihood.family != Family::Binomial {
            return Ok(());
        }
        let pred = self.predictor();
        let trials = self.data.trials.as_ref().ok_or(Error::MissingTrials)?;
        let mut omega = DMatrix::zeros(pred.nrows(), pred.ncols());
        for t in 0..pred.ncols() {
            for c in 0..pred.nrows() {
                let n = trials[(c, t)].round() as u32;
                if self.data.is_observed(c, t) && n > 0 {
                    omega[(c, t)] = pg_sample(n, pred[(c, t)], &mut self.rng);
                }
            }
        }
        self.state.omega = Some(omega);
        Ok(())
    }

    /// Latent factors from their joint Gaussian full conditional.
    pub fn update_factors(&mut self) -> Result<()> {
        let wk = self.working_kernel();
        let (t_len, k) = (self.n_times(), self.k());
        let ups_inv = linalg::spd_inverse(&self.state.upsilon, "Upsilon")?;
        let mut prec = kron(&self.cache.h_inv, &ups_inv);
        let mut lin = DVector::zeros(t_len * k);
        let xb = self.regression_part();
        let lambda = &self.state.lambda;
        for t in 0..t_len {
            let p_t = wk.prec.column(t);
            let mut weighted = lambda.clone();
            for (c, mut row) in weighted.row_iter_mut().enumerate() {
                row *= p_t[c];
            }
            let block = lambda.transpose() * &weighted;
            let mut target = prec.view_mut((t * k, t * k), (k, k));
            target += &block;
            let resid = DVector::from_fn(lambda.nrows(), |c, _| wk.lin[(c, t)] - p_t[c] * xb[(c, t)]);
            lin.rows_mut(t * k, k).copy_from(&(lambda.transpose() * resid));
        }
        let eta = linalg::sample_mvn_precision(&prec, &lin, &mut self.rng, "factor precision")?;
        for t in 0..t_len {
            for j in 0..k {
                self.state.eta[(t, j)] = eta[t * k + j];
            }
        }
        Ok(())
    }

    /// Precision and linear term of the regression full conditional.
    pub(crate) fn regression_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.state.beta.len();
        let wk = self.working_kernel();
        let factor_part = &self.state.lambda * self.state.eta.transpose();
        let mut prec = DMatrix::identity(p, p) / self.spec.hyper.beta_variance;
        let mut lin = DVector::zeros(p);
        for t in 0..self.n_times() {
            let x = &self.data.covariates[t];
            let mut weighted = x.clone();
            for (c, mut row) in weighted.row_iter_mut().enumerate() {
                row *= wk.prec[(c, t)];
            }
            prec += x.transpose() * &weighted;
            let resid = DVector::from_fn(x.nrows(), |c, _| wk.lin[(c, t)] - wk.prec[(c, t)] * factor_part[(c, t)]);
            lin += x.transpose() * resid;
        }
        (prec, lin)
    }

    /// Regression coefficients under the `N(0, beta_variance·I)` prior.
    pub fn update_regression(&mut self) -> Result<()> {
        if self.state.beta.is_empty() {
            return Ok(());
        }
        let (prec, lin) = self.regression_system();
        self.state.beta = linalg::sample_mvn_precision(&prec, &lin, &mut self.rng, "regression precision")?;
        Ok(())
    }

    /// Observation variances from their inverse-gamma full conditionals.
    pub fn update_sigma2(&mut self) -> Result<()> {
        if self.spec.likelihood.family != Family::Gaussian {
            return Ok(());
        }
        let pred = self.predictor();
        let (a, b) = (self.spec.hyper.sigma_shape, self.spec.hyper.sigma_scale);
        let cells = self.data.n_cells();
        let mut counts = vec![0.0; cells];
        let mut ss = vec![0.0; cells];
        for t in 0..self.n_times() {
            for c in 0..cells {
                if self.data.is_observed(c, t) {
                    let r = self.data.y[(c, t)] - pred[(c, t)];
                    counts[c] += 1.0;
                    ss[c] += r * r;
                }
            }
        }
        if self.spec.pooled_variance {
            let n: f64 = counts.iter().sum();
            let s: f64 = ss.iter().sum();
            let v = inv_gamma(a + 0.5 * n, b + 0.5 * s, &mut self.rng);
            self.state.sigma2.fill(v);
        } else {
            for c in 0..cells {
                self.state.sigma2[c] = inv_gamma(a + 0.5 * counts[c], b + 0.5 * ss[c], &mut self.rng);
            }
        }
        Ok(())
    }

    /// Vectors with prior `N(0, w·κ⊗F)` and their weights `w⁻¹`.
    fn kappa_vectors(&self) -> Vec<(DVector<f64>, f64)> {
        match &self.state.stick {
            Some(stick) => stick
                .columns
                .iter()
                .flat_map(|col| col.alpha.iter().map(|a| (DVector::from_column_slice(a), 1.0)))
                .collect(),
            None => {
                let tau = self.tau();
                (0..self.k()).map(|j| (self.state.lambda.column(j).into_owned(), tau[j])).collect()
            }
        }
    }

    /// `Aᵀ F⁻¹ A` with `A` the `m × O` reshape of a stacked vector.
    fn spatial_cross(&self, v: &DVector<f64>, f_prec: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, o) = (self.data.n_locations, self.data.n_types);
        let a = DMatrix::from_column_slice(m, o, v.as_slice());
        a.transpose() * f_prec * a
    }

    /// `κ ~ IW(υ + m·N, Θ + Σ w Aᵀ F⁻¹ A)`.
    pub fn update_kappa(&mut self) -> Result<()> {
        let vectors = self.kappa_vectors();
        let mut scale = self.hyper.kappa_scale.clone();
        for (v, w) in &vectors {
            scale += self.spatial_cross(v, &self.cache.f_prec) * *w;
        }
        let df = self.hyper.kappa_df + (self.data.n_locations * vectors.len()) as f64;
        self.state.kappa = inv_wishart(df, &linalg::symmetrize(scale), &mut self.rng)?;
        Ok(())
    }

    /// `Υ ~ IW(ζ_df + T, Ω + Eᵀ H⁻¹ E)`.
    pub fn update_upsilon(&mut self) -> Result<()> {
        let e = &self.state.eta;
        let scale = &self.hyper.upsilon_scale + e.transpose() * &self.cache.h_inv * e;
        let df = self.hyper.upsilon_df + self.n_times() as f64;
        self.state.upsilon = inv_wishart(df, &linalg::symmetrize(scale), &mut self.rng)?;
        Ok(())
    }

    /// Per-column prior evidence `(n_j, q_j)` for the shrinkage update.
    fn column_evidence(&self) -> Result<Vec<(f64, f64)>> {
        match &self.state.stick {
            Some(stick) => Ok(stick
                .columns
                .iter()
                .map(|c| (c.n_atoms() as f64, c.theta.iter().map(|t| t * t).sum()))
                .collect()),
            None => {
                let q = self.prior_precision()?;
                Ok((0..self.k())
                    .map(|j| {
                        let l = self.state.lambda.column(j).into_owned();
                        (l.len() as f64, linalg::quad_form(&q, &l))
                    })
                    .collect())
            }
        }
    }

    /// Column precisions: multiplicative-gamma or independent-gamma conditionals.
    pub fn update_delta(&mut self) -> Result<()> {
        let ev = self.column_evidence()?;
        let (a1, a2) = (self.spec.hyper.a1, self.spec.hyper.a2);
        let k = self.k();
        match self.spec.shrinkage {
            Shrinkage::IndependentGamma => {
                for (j, (n, q)) in ev.iter().enumerate() {
                    self.state.mgp.delta[j] = gamma(a1 + 0.5 * n, a2 + 0.5 * q, &mut self.rng);
                }
            }
            Shrinkage::Mgp => {
                for h in 0..k {
                    let prior_shape = if h == 0 { a1 } else { a2 };
                    let mut shape = prior_shape;
                    let mut rate = 1.0;
                    let mut partial = 1.0;
                    for (j, (n, q)) in ev.iter().enumerate() {
                        if j != h {
                            partial *= self.state.mgp.delta[j];
                        }
                        if j >= h {
                            shape += 0.5 * n;
                            rate += 0.5 * partial * q;
                        }
                    }
                    self.state.mgp.delta[h] = gamma(shape, rate, &mut self.rng);
                }
            }
        }
        Ok(())
    }

    /// Observation variances, `κ`, `Υ` and the column precisions.
    pub fn update_variance_components(&mut self) -> Result<()> {
        self.update_sigma2()?;
        self.update_kappa()?;
        self.update_upsilon()?;
        self.update_delta()
    }

    /// One full scan in the fixed order.
    pub fn sweep(&mut self) -> Result<()> {
        self.update_polya_gamma()?;
        self.update_loadings_block()?;
        self.update_factors()?;
        self.update_regression()?;
        self.update_variance_components()?;
        self.update_correlation_parameters()?;
        self.state.iteration += 1;
        if cfg!(debug_assertions) {
            self.check_invariants()?;
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        if let Some(stick) = &self.state.stick {
            stick.check_invariants()?;
        }
        for (name, m) in [("kappa", &self.state.kappa), ("Upsilon", &self.state.upsilon)] {
            if linalg::cholesky_strict(m).is_none() {
                return Err(Error::InvariantViolation(format!("{name} is not positive definite")));
            }
        }
        for (name, value, prior) in [("psi", self.state.psi, self.hyper.psi), ("rho", self.state.rho, self.hyper.rho)] {
            if prior.log_density(value) == f64::NEG_INFINITY {
                return Err(Error::InvariantViolation(format!("{name} = {value} outside its prior support")));
            }
        }
        if self.state.sigma2.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvariantViolation("non-positive observation variance".into()));
        }
        Ok(())
    }

    /// Snapshot of the current state for storage.
    pub fn draw(&self, chain: usize) -> Draw {
        let s = &self.state;
        let (theta, xi, alpha) = match &s.stick {
            Some(st) => (
                st.columns.iter().map(|c| c.theta.clone()).collect(),
                st.columns.iter().map(|c| c.xi.clone()).collect(),
                st.columns.iter().map(|c| c.alpha.clone()).collect(),
            ),
            None => (Vec::new(), Vec::new(), Vec::new()),
        };
        Draw {
            chain,
            iteration: s.iteration,
            beta: s.beta.clone(),
            eta: s.eta.clone(),
            lambda: s.lambda.clone(),
            theta,
            xi,
            alpha,
            delta: s.mgp.delta.clone(),
            kappa: s.kappa.clone(),
            rho: s.rho,
            psi: s.psi,
            upsilon: s.upsilon.clone(),
            sigma2: s.sigma2.clone(),
        }
    }

    /// Pointwise log-likelihood of the observed cell-times at the current state.
    pub fn pointwise_loglik(&self) -> Vec<f64> {
        let pred = self.predictor();
        let family = self.spec.likelihood.family;
        observed_cells(&self.data)
            .into_iter()
            .map(|(c, t)| {
                let n = self.data.trials.as_ref().map_or(0.0, |m| m[(c, t)]);
                cell_log_likelihood(family, self.data.y[(c, t)], n, pred[(c, t)], self.state.sigma2[c])
            })
            .collect()
    }

    pub fn meta(&self) -> DrawsMeta {
        DrawsMeta {
            n_locations: self.data.n_locations,
            n_types: self.data.n_types,
            times: self.data.times.iter().copied().collect(),
            k: self.k(),
            p: self.data.n_covariates(),
            family: self.spec.likelihood.family,
            temporal_kernel: self.spec.temporal_kernel,
            loadings_prior: self.spec.loadings_prior,
            shrinkage: self.spec.shrinkage,
            truncation: self.spec.truncation,
            observed: observed_cells(&self.data),
        }
    }
}

/// `(cell, t)` of observed entries, visit-major.
pub fn observed_cells(data: &ObservationSet) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for t in 0..data.n_times() {
        for c in 0..data.n_cells() {
            if data.is_observed(c, t) {
                out.push((c, t));
            }
        }
    }
    out
}

fn init_state(spec: &ModelSpec, data: &ObservationSet, hyper: &ResolvedHyper, rng: &mut ChaCha8Rng) -> Result<ChainState> {
    let (m, o, k, t_len) = (data.n_locations, data.n_types, spec.k, data.n_times());
    let cells = m * o;
    let rho = hyper.rho.initial();
    let psi = hyper.psi.initial();
    let kappa = DMatrix::identity(o, o);
    let upsilon = DMatrix::identity(k, k);
    let (a1, a2) = (spec.hyper.a1, spec.hyper.a2);
    let delta: Vec<f64> = (0..k)
        .map(|h| match spec.shrinkage {
            Shrinkage::Mgp => gamma(if h == 0 { a1 } else { a2 }, 1.0, rng),
            Shrinkage::IndependentGamma => gamma(a1, a2, rng),
        })
        .collect();
    let tau = match spec.shrinkage {
        Shrinkage::Mgp => mgp_precisions(&delta),
        Shrinkage::IndependentGamma => delta.clone(),
    };
    let (f_prec, _) = spatial_factors(spec, &data.spatial, rho)?;
    let prior_prec = kron(&DMatrix::identity(o, o), &f_prec);
    let prior_chol = cholesky(&prior_prec, "stick prior precision")?;
    let zero = DVector::zeros(cells);

    let (stick, lambda) = if spec.loadings_prior.is_psbp() {
        let mut columns = Vec::with_capacity(k);
        for &tau_j in &tau {
            columns.push(init_column(spec.truncation, cells, tau_j, &prior_chol, rng));
        }
        let st = StickState { columns, truncation: spec.truncation };
        let lambda = crate::psbp::loadings_from_atoms(&st)?;
        (Some(st), lambda)
    } else {
        let mut lambda = DMatrix::zeros(cells, k);
        for j in 0..k {
            let v = sample_with_precision_factor(&prior_chol, &zero, rng) / tau[j].sqrt();
            lambda.set_column(j, &v);
        }
        (None, lambda)
    };

    let (h_inv, _) = temporal_factors(spec, &data.times, psi)?;
    let eta_prec = kron(&h_inv, &DMatrix::identity(k, k));
    let eta_vec = linalg::sample_mvn_precision(&eta_prec, &DVector::zeros(t_len * k), rng, "factor prior")?;
    let eta = DMatrix::from_fn(t_len, k, |t, j| eta_vec[t * k + j]);
    let p = data.n_covariates();
    let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));

    let sigma2 = match spec.likelihood.family {
        Family::Gaussian => {
            let obs: Vec<f64> = observed_cells(data).into_iter().map(|(c, t)| data.y[(c, t)]).collect();
            let v = if obs.len() >= 2 {
                let mean = obs.iter().sum::<f64>() / obs.len() as f64;
                obs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (obs.len() - 1) as f64
            } else {
                1.0
            };
            DVector::from_element(cells, if v > 0.0 { v } else { 1.0 })
        }
        Family::Binomial => DVector::from_element(cells, 1.0),
    };
    let omega = match spec.likelihood.family {
        Family::Binomial => {
            let trials = data.trials.as_ref().ok_or(Error::MissingTrials)?;
            Some(DMatrix::from_fn(cells, t_len, |c, t| {
                let n = trials[(c, t)].round() as u32;
                if data.is_observed(c, t) && n > 0 {
                    pg_sample(n, 0.0, rng)
                } else {
                    0.0
                }
            }))
        }
        Family::Gaussian => None,
    };
    Ok(ChainState {
        iteration: 0,
        beta,
        eta,
        lambda,
        stick,
        mgp: MgpState { delta, a1, a2 },
        kappa,
        rho,
        psi,
        upsilon,
        sigma2,
        omega,
        tuning: Tuning::default(),
    })
}

/// Prior draw of one stick column: sticks, latent probits, indicators, atoms.
fn init_column(
    truncation: Truncation,
    cells: usize,
    tau_j: f64,
    prior_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    rng: &mut ChaCha8Rng,
) -> StickColumn {
    let zero = DVector::zeros(cells);
    let mut col = StickColumn { alpha: Vec::new(), z: Vec::new(), theta: Vec::new(), xi: vec![usize::MAX; cells], u: Vec::new() };
    let max_sticks = match truncation {
        Truncation::Finite(l) => l - 1,
        Truncation::Slice => MAX_STICKS,
    };
    let sd = 1.0 / tau_j.sqrt();
    while col.n_sticks() < max_sticks && col.xi.iter().any(|&x| x == usize::MAX) {
        let l = col.n_sticks();
        let alpha: Vec<f64> = sample_with_precision_factor(prior_chol, &zero, rng).iter().copied().collect();
        let z: Vec<f64> = alpha.iter().map(|a| a + rng.sample::<f64, _>(StandardNormal)).collect();
        for c in 0..cells {
            if col.xi[c] == usize::MAX && z[c] > 0.0 {
                col.xi[c] = l;
            }
        }
        col.alpha.push(alpha);
        col.z.push(z);
        col.theta.push(sd * rng.sample::<f64, _>(StandardNormal));
    }
    match truncation {
        Truncation::Finite(l) => {
            // cells that never broke take the closing atom; remaining sticks are free
            while col.n_sticks() < l - 1 {
                let alpha: Vec<f64> = sample_with_precision_factor(prior_chol, &zero, rng).iter().copied().collect();
                let z: Vec<f64> = alpha.iter().map(|a| a + rng.sample::<f64, _>(StandardNormal)).collect();
                col.alpha.push(alpha);
                col.z.push(z);
                col.theta.push(sd * rng.sample::<f64, _>(StandardNormal));
            }
            for x in col.xi.iter_mut() {
                if *x == usize::MAX {
                    *x = l - 1;
                }
            }
            col.theta.push(sd * rng.sample::<f64, _>(StandardNormal));
            // sticks after a cell's indicator carry unconstrained probits; below it they must be negative
            for c in 0..cells {
                for r in 0..col.xi[c].min(col.n_sticks()) {
                    if col.z[r][c] >= 0.0 {
                        col.z[r][c] = normal_negative(col.alpha[r][c], rng);
                    }
                }
            }
        }
        Truncation::Slice => {
            if col.xi.iter().any(|&x| x == usize::MAX) {
                warn!("stick initialization hit the cap of {MAX_STICKS} sticks");
                let last = col.n_sticks() - 1;
                for c in 0..cells {
                    if col.xi[c] == usize::MAX {
                        col.xi[c] = last;
                        col.z[last][c] = normal_positive(col.alpha[last][c], rng);
                    }
                }
            }
            col.u = (0..cells)
                .map(|c| {
                    let w = col.cell_weights(c, truncation)[col.xi[c]];
                    w * uniform_open(rng)
                })
                .collect();
        }
    }
    col
}

/// Serialized chain state plus rng, for resuming.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: ChainState,
    pub rng: ChaCha8Rng,
    pub burn_in: usize,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        serde_json::to_writer(&mut out, self).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out)?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("checkpoint header lacks a version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        serde_json::from_reader(input).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Runs one chain and keeps every `thin`-th post-burn-in state.
pub fn run_chain(spec: &ModelSpec, data: &ObservationSet, settings: RunSettings, chain: usize) -> Result<PosteriorDraws> {
    settings.validate()?;
    let mut sampler = Sampler::new(spec, data, settings.seed, chain)?;
    sampler.burn_in = settings.burn_in;
    continue_chain(&mut sampler, settings, chain)
}

/// Continues a sampler up to `settings.n_iter` total sweeps.
pub fn continue_chain(sampler: &mut Sampler, settings: RunSettings, chain: usize) -> Result<PosteriorDraws> {
    settings.validate()?;
    let mut out = PosteriorDraws::new(sampler.meta());
    for iter in sampler.state.iteration..settings.n_iter {
        sampler.sweep()?;
        if iter >= settings.burn_in && (iter - settings.burn_in + 1) % settings.thin == 0 {
            out.draws.push(sampler.draw(chain));
            out.loglik.push(&sampler.pointwise_loglik())?;
        }
    }
    let tuning = &sampler.state.tuning;
    out.acceptance.push(Acceptance { chain, rho: tuning.rho.rate(), psi: tuning.psi.rate() });
    Ok(out)
}

/// Runs `chains` independent chains in parallel and merges them in chain order.
pub fn run_chains(spec: &ModelSpec, data: &ObservationSet, settings: RunSettings, chains: usize) -> Result<PosteriorDraws> {
    if chains == 0 {
        return Err(Error::PreconditionViolation("at least one chain is required".into()));
    }
    let results: Vec<Result<PosteriorDraws>> =
        (0..chains).into_par_iter().map(|c| run_chain(spec, data, settings, c)).collect();
    let mut iter = results.into_iter();
    let mut merged = iter.next().expect("at least one chain")?;
    for r in iter {
        merged = merged.merge(r?)?;
    }
    Ok(merged)
}

#[cfg(test)]
mod tests;
