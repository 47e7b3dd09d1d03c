use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::psbp::{MgpState, StickState};

/// Robbins–Monro tuner for a random-walk Metropolis step on a logit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhTuner {
    pub log_step: f64,
    pub adapt_steps: u64,
    /// Counts after burn-in.
    pub accepted: u64,
    pub proposed: u64,
}

impl Default for MhTuner {
    fn default() -> Self {
        MhTuner { log_step: 0.0, adapt_steps: 0, accepted: 0, proposed: 0 }
    }
}

/// Acceptance rate the tuner steers toward.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

impl MhTuner {
    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn adapt(&mut self, accept_prob: f64) {
        self.adapt_steps += 1;
        let gain = (self.adapt_steps as f64).powf(-0.6).min(0.5);
        self.log_step = (self.log_step + gain * (accept_prob - TARGET_ACCEPTANCE)).clamp(-12.0, 5.0);
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
    }

    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub rho: MhTuner,
    pub psi: MhTuner,
}

/// Every unknown of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// Completed sweeps.
    pub iteration: usize,
    pub beta: DVector<f64>,
    /// `T × k`, row `t` is `η_t`.
    pub eta: DMatrix<f64>,
    /// Current loadings `mO × k`.
    pub lambda: DMatrix<f64>,
    /// Present only for the PSBP loading priors.
    pub stick: Option<StickState>,
    pub mgp: MgpState,
    pub kappa: DMatrix<f64>,
    pub rho: f64,
    pub psi: f64,
    pub upsilon: DMatrix<f64>,
    /// Per-cell variance (all ones for binomial data).
    pub sigma2: DVector<f64>,
    /// Pólya-Gamma variables `mO × T` (binomial only).
    pub omega: Option<DMatrix<f64>>,
    pub tuning: Tuning,
}
