//! Adaptive random-walk Metropolis updates of `ρ` and `ψ` on a logit scale.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{spatial_factors, temporal_factors, MhTuner, Sampler};
use crate::error::Result;
use crate::linalg;
use crate::model::ResolvedPrior;

/// `(x, ln p + ln(1 − p))` in the logit coordinates of `(lo, hi)`.
fn logit_jacobian(x: f64, lo: f64, hi: f64) -> f64 {
    let p = (x - lo) / (hi - lo);
    p.ln() + (1.0 - p).ln()
}

fn to_logit(x: f64, lo: f64, hi: f64) -> f64 {
    let p = (x - lo) / (hi - lo);
    (p / (1.0 - p)).ln()
}

fn from_logit(y: f64, lo: f64, hi: f64) -> f64 {
    let p = crate::likelihood::logistic(y);
    lo + (hi - lo) * p
}

/// One proposal. `target` returns the log conditional (without prior) and any
/// cached factorization to keep on acceptance; `None` means the proposal is
/// rejected outright.
fn mh_step<R, T, F>(
    current: f64,
    current_logp: f64,
    prior: ResolvedPrior,
    tuner: &mut MhTuner,
    adapting: bool,
    rng: &mut R,
    mut target: F,
) -> Option<(f64, T)>
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> Option<(f64, T)>,
{
    let ResolvedPrior::Bounded { lower, upper, .. } = prior else {
        return None;
    };
    let y = to_logit(current, lower, upper);
    let y_new = y + tuner.step() * rng.sample::<f64, _>(StandardNormal);
    let proposal = from_logit(y_new, lower, upper);
    let mut result = None;
    let mut accept_prob = 0.0;
    if proposal > lower && proposal < upper {
        if let Some((logp_new, extra)) = target(proposal) {
            let log_ratio = logp_new + prior.log_density(proposal) + logit_jacobian(proposal, lower, upper)
                - current_logp
                - prior.log_density(current)
                - logit_jacobian(current, lower, upper);
            accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.exp().min(1.0) };
            if rng.random::<f64>() < accept_prob {
                result = Some((proposal, extra));
            }
        }
    }
    if adapting {
        tuner.adapt(accept_prob);
    } else {
        tuner.record(result.is_some());
    }
    result
}

impl Sampler {
    /// Log conditional of `ρ` given the stick/loading vectors, up to a constant.
    fn rho_log_conditional(&self, f_prec: &DMatrix<f64>, f_logdet: f64) -> Result<f64> {
        let kappa_inv = linalg::spd_inverse(&self.state.kappa, "kappa")?;
        let vectors = self.kappa_vectors();
        let o = self.data.n_types as f64;
        let mut quad = 0.0;
        for (v, w) in &vectors {
            quad += w * (&kappa_inv * self.spatial_cross(v, f_prec)).trace();
        }
        Ok(-0.5 * vectors.len() as f64 * o * f_logdet - 0.5 * quad)
    }

    /// Log conditional of `ψ` given the factors, up to a constant.
    fn psi_log_conditional(&self, h_inv: &DMatrix<f64>, h_logdet: f64) -> Result<f64> {
        let ups_inv = linalg::spd_inverse(&self.state.upsilon, "Upsilon")?;
        let e = &self.state.eta;
        let quad = (ups_inv * e.transpose() * h_inv * e).trace();
        Ok(-0.5 * self.k() as f64 * h_logdet - 0.5 * quad)
    }

    pub fn update_rho(&mut self) -> Result<()> {
        if self.hyper.rho.is_fixed() || !self.spec.loadings_prior.is_spatial() {
            return Ok(());
        }
        let current = self.rho_log_conditional(&self.cache.f_prec, self.cache.f_logdet)?;
        let adapting = self.state.iteration < self.burn_in;
        let mut tuner = self.state.tuning.rho.clone();
        let mut rng = self.rng.clone();
        let result = mh_step(self.state.rho, current, self.hyper.rho, &mut tuner, adapting, &mut rng, |rho| {
            let (f, logdet) = spatial_factors(&self.spec, &self.data.spatial, rho).ok()?;
            let lp = self.rho_log_conditional(&f, logdet).ok()?;
            Some((lp, (f, logdet)))
        });
        self.rng = rng;
        self.state.tuning.rho = tuner;
        if let Some((rho, (f, logdet))) = result {
            self.state.rho = rho;
            self.cache.f_prec = f;
            self.cache.f_logdet = logdet;
        }
        Ok(())
    }

    pub fn update_psi(&mut self) -> Result<()> {
        if self.hyper.psi.is_fixed() {
            return Ok(());
        }
        let current = self.psi_log_conditional(&self.cache.h_inv, self.cache.h_logdet)?;
        let adapting = self.state.iteration < self.burn_in;
        let mut tuner = self.state.tuning.psi.clone();
        let mut rng = self.rng.clone();
        let result = mh_step(self.state.psi, current, self.hyper.psi, &mut tuner, adapting, &mut rng, |psi| {
            let (h_inv, logdet) = temporal_factors(&self.spec, &self.data.times, psi).ok()?;
            let lp = self.psi_log_conditional(&h_inv, logdet).ok()?;
            Some((lp, (h_inv, logdet)))
        });
        self.rng = rng;
        self.state.tuning.psi = tuner;
        if let Some((psi, (h_inv, logdet))) = result {
            self.state.psi = psi;
            self.cache.h_inv = h_inv;
            self.cache.h_logdet = logdet;
        }
        Ok(())
    }

    pub fn update_correlation_parameters(&mut self) -> Result<()> {
        self.update_rho()?;
        self.update_psi()
    }
}
