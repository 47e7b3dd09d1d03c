//! Model menu and hyperparameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SpatialStructure;
use crate::error::{Error, Result};
use crate::kernels::{psi_bounds, rho_bounds, SpatialKernel, TemporalKernel};
use crate::likelihood::{Family, LikelihoodSpec};
use crate::psbp::Truncation;

/// Prior on the loading columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadingsPrior {
    /// PSBP with spatially dependent sticks `α ~ N(0, κ ⊗ F(ρ))`.
    PsbpSpatial,
    /// PSBP with `F = I`.
    PsbpIndependent,
    /// `λ_j ~ N(0, τ_j⁻¹ κ ⊗ F(ρ))`.
    GaussianCar,
    /// `λ_j ~ N(0, τ_j⁻¹ κ ⊗ I)`.
    GaussianIid,
}

impl LoadingsPrior {
    pub fn is_psbp(self) -> bool {
        matches!(self, LoadingsPrior::PsbpSpatial | LoadingsPrior::PsbpIndependent)
    }

    /// Whether `F(ρ)` enters the prior at all.
    pub fn is_spatial(self) -> bool {
        matches!(self, LoadingsPrior::PsbpSpatial | LoadingsPrior::GaussianCar)
    }
}

/// Column-precision prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shrinkage {
    /// `τ_j = ∏_{h≤j} δ_h`, `δ_1 ~ Ga(a1, 1)`, `δ_h ~ Ga(a2, 1)`.
    Mgp,
    /// `τ_j = δ_j ~ Ga(a1, a2)` with `a2` a rate.
    IndependentGamma,
}

/// Prior for a correlation parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamPrior {
    Fixed(f64),
    Uniform { lower: f64, upper: f64 },
    /// `∝ (x − lower)^{a−1} (upper − x)^{b−1}` on `(lower, upper)`.
    TransformedBeta { lower: f64, upper: f64, a: f64, b: f64 },
    /// Bounds derived from the data (see [`ModelSpec::resolve`]).
    Auto,
}

/// Prior after data-dependent bounds are filled in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ResolvedPrior {
    Fixed(f64),
    Bounded { lower: f64, upper: f64, a: f64, b: f64 },
}

impl ResolvedPrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, ResolvedPrior::Fixed(_))
    }

    /// Log density up to a constant; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            ResolvedPrior::Fixed(v) => {
                if x == v {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            ResolvedPrior::Bounded { lower, upper, a, b } => {
                if !(x > lower && x < upper) {
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * (x - lower).ln() + (b - 1.0) * (upper - x).ln()
            }
        }
    }

    /// A starting value: the fixed value or the midpoint.
    pub fn initial(&self) -> f64 {
        match *self {
            ResolvedPrior::Fixed(v) => v,
            ResolvedPrior::Bounded { lower, upper, .. } => 0.5 * (lower + upper),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// `υ`; `None` means `O + 1`.
    pub kappa_df: Option<f64>,
    /// `Θ = kappa_scale · I_O`.
    pub kappa_scale: f64,
    /// `ζ_df`; `None` means `k + 1`.
    pub upsilon_df: Option<f64>,
    /// `Ω = upsilon_scale · I_k`.
    pub upsilon_scale: f64,
    /// `σ² ~ IG(a, b)`.
    pub sigma_shape: f64,
    pub sigma_scale: f64,
    pub a1: f64,
    pub a2: f64,
    /// Prior variance of each regression coefficient.
    pub beta_variance: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            kappa_df: None,
            kappa_scale: 1.0,
            upsilon_df: None,
            upsilon_scale: 1.0,
            sigma_shape: 0.001,
            sigma_scale: 0.001,
            a1: 1.0,
            a2: 20.0,
            beta_variance: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k: usize,
    pub truncation: Truncation,
    pub likelihood: LikelihoodSpec,
    pub spatial_kernel: SpatialKernel,
    pub rho: ParamPrior,
    pub temporal_kernel: TemporalKernel,
    pub psi: ParamPrior,
    pub loadings_prior: LoadingsPrior,
    pub shrinkage: Shrinkage,
    pub hyper: Hyper,
    /// One `σ²` shared by all cells instead of one per cell.
    pub pooled_variance: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            k: 6,
            truncation: Truncation::Slice,
            likelihood: LikelihoodSpec::new(Family::Gaussian),
            spatial_kernel: SpatialKernel::Car,
            rho: ParamPrior::Fixed(0.99),
            temporal_kernel: TemporalKernel::Exponential,
            psi: ParamPrior::Auto,
            loadings_prior: LoadingsPrior::PsbpSpatial,
            shrinkage: Shrinkage::Mgp,
            hyper: Hyper::default(),
            pooled_variance: false,
        }
    }
}

/// The five comparison models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelVariant {
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [Self::M1, Self::M2, Self::M3, Self::M4, Self::M5];

    pub fn name(self) -> &'static str {
        match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
            Self::M5 => "M5",
        }
    }

    /// Applies the variant's loadings and shrinkage priors to `base`.
    pub fn apply(self, base: &ModelSpec) -> ModelSpec {
        let (loadings_prior, shrinkage) = match self {
            Self::M1 => (LoadingsPrior::PsbpSpatial, Shrinkage::Mgp),
            Self::M2 => (LoadingsPrior::PsbpIndependent, Shrinkage::Mgp),
            Self::M3 => (LoadingsPrior::PsbpSpatial, Shrinkage::IndependentGamma),
            Self::M4 => (LoadingsPrior::GaussianCar, Shrinkage::IndependentGamma),
            Self::M5 => (LoadingsPrior::GaussianIid, Shrinkage::IndependentGamma),
        };
        ModelSpec { loadings_prior, shrinkage, ..base.clone() }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Self::M1),
            "M2" => Ok(Self::M2),
            "M3" => Ok(Self::M3),
            "M4" => Ok(Self::M4),
            "M5" => Ok(Self::M5),
            _ => Err(Error::InvalidParameter(format!("unknown model {s}"))),
        }
    }
}

/// Hyperparameters with data-dependent defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedHyper {
    pub kappa_df: f64,
    pub kappa_scale: DMatrix<f64>,
    pub upsilon_df: f64,
    pub upsilon_scale: DMatrix<f64>,
    pub rho: ResolvedPrior,
    pub psi: ResolvedPrior,
}

fn check_bounds(name: &str, lower: f64, upper: f64) -> Result<()> {
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::InvalidParameter(format!("{name} prior bounds ({lower}, {upper}) are invalid")));
    }
    Ok(())
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if let Truncation::Finite(l) = self.truncation {
            if l == 0 {
                return Err(Error::InvalidParameter("finite truncation L must be at least 1".into()));
            }
        }
        let h = &self.hyper;
        let positive = [
            ("kappa_scale", h.kappa_scale),
            ("upsilon_scale", h.upsilon_scale),
            ("sigma_shape", h.sigma_shape),
            ("sigma_scale", h.sigma_scale),
            ("a1", h.a1),
            ("a2", h.a2),
            ("beta_variance", h.beta_variance),
        ];
        for (name, v) in positive.into_iter().chain(h.kappa_df.map(|v| ("kappa_df", v))).chain(h.upsilon_df.map(|v| ("upsilon_df", v))) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Fills data-dependent defaults: IW degrees of freedom and the `ρ`/`ψ` prior bounds.
    pub fn resolve(&self, n_types: usize, times: &DVector<f64>, spatial: &SpatialStructure) -> Result<ResolvedHyper> {
        self.validate()?;
        let kappa_df = self.hyper.kappa_df.unwrap_or(n_types as f64 + 1.0);
        let upsilon_df = self.hyper.upsilon_df.unwrap_or(self.k as f64 + 1.0);
        if kappa_df <= n_types as f64 - 1.0 {
            return Err(Error::InvalidParameter(format!("kappa_df {kappa_df} must exceed O - 1")));
        }
        if upsilon_df <= self.k as f64 - 1.0 {
            return Err(Error::InvalidParameter(format!("upsilon_df {upsilon_df} must exceed k - 1")));
        }
        let rho = match (self.rho, self.spatial_kernel) {
            (ParamPrior::Fixed(v), _) => ResolvedPrior::Fixed(v),
            (ParamPrior::Uniform { lower, upper }, _) => {
                check_bounds("rho", lower, upper)?;
                ResolvedPrior::Bounded { lower, upper, a: 1.0, b: 1.0 }
            }
            (ParamPrior::TransformedBeta { lower, upper, a, b }, _) => {
                check_bounds("rho", lower, upper)?;
                ResolvedPrior::Bounded { lower, upper, a, b }
            }
            (ParamPrior::Auto, SpatialKernel::Car) => ResolvedPrior::Bounded { lower: 0.0, upper: 1.0, a: 1.0, b: 1.0 },
            (ParamPrior::Auto, SpatialKernel::ExponentialGp) => match spatial {
                SpatialStructure::Point { distances } => {
                    let (lower, upper) = rho_bounds(distances)?;
                    ResolvedPrior::Bounded { lower, upper, a: 1.0, b: 1.0 }
                }
                SpatialStructure::Areal { .. } => {
                    return Err(Error::KindMismatch("exponential GP needs point-referenced data".into()))
                }
            },
        };
        let psi = match (self.psi, self.temporal_kernel) {
            (ParamPrior::Fixed(v), _) => ResolvedPrior::Fixed(v),
            (ParamPrior::Uniform { lower, upper }, _) => {
                check_bounds("psi", lower, upper)?;
                ResolvedPrior::Bounded { lower, upper, a: 1.0, b: 1.0 }
            }
            (ParamPrior::TransformedBeta { lower, upper, a, b }, _) => {
                check_bounds("psi", lower, upper)?;
                ResolvedPrior::Bounded { lower, upper, a, b }
            }
            (ParamPrior::Auto, TemporalKernel::Exponential) => {
                let (lower, upper) = psi_bounds(times.as_slice())?;
                ResolvedPrior::Bounded { lower, upper, a: 1.0, b: 1.0 }
            }
            (ParamPrior::Auto, TemporalKernel::Ar1) => ResolvedPrior::Bounded { lower: -1.0, upper: 1.0, a: 1.0, b: 1.0 },
        };
        Ok(ResolvedHyper {
            kappa_df,
            kappa_scale: DMatrix::identity(n_types, n_types) * self.hyper.kappa_scale,
            upsilon_df,
            upsilon_scale: DMatrix::identity(self.k, self.k) * self.hyper.upsilon_scale,
            rho,
            psi,
        })
    }
}
