//! Synthetic data generators and the model-comparison experiments built on
//! them.

pub mod lattice;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::clustering::{build_w, cocluster_all, select_kstar, ss_quantities};
use crate::data::{fmt_f64, ObservationSet, SpatialStructure};
use crate::diagnostics::{crps, waic_store};
use crate::dist::{inv_wishart, uniform_open};
use crate::error::{Error, Result};
use crate::kernels::{spatial_precision, temporal_matrix, SpatialKernel, SpatialKernelSpec, TemporalKernel, TemporalKernelSpec};
use crate::linalg::{self, kron, sample_mvn_precision};
use crate::model::{ModelSpec, ModelVariant, ParamPrior};
use crate::prediction::{ppd_sample, PpdRequest};
use crate::psbp::stick_weights;
use crate::sampler::{run_chain, RunSettings};

/// Number of fitted visits in both designs.
pub const FIT_TIMES: usize = 10;
/// Fitted visits plus the three forecast steps; the last one is scored.
pub const SIM1_TOTAL_TIMES: usize = 13;
/// Mixture components per loading column in the generating model.
pub const SIM1_TRUE_COMPONENTS: usize = 10;

/// Visit times `0, 1/9, …` with `n` entries; the first ten span `[0, 1]`.
pub fn visit_times(n: usize) -> Vec<f64> {
    (0..n).map(|t| t as f64 / (FIT_TIMES - 1) as f64).collect()
}

/// Stream of `seed` reserved for one purpose.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn fit_seed(seed: u64, replicate: usize, model: usize) -> u64 {
    seed ^ ((replicate as u64 + 1) << 20).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (model as u64 + 1)
}

/// Draws `N(0, κ F)` on the lattice where `F⁻¹ = D − ρW`, or `F = I`.
fn spatial_field<R: Rng + ?Sized>(
    spatial: &SpatialStructure,
    rho: Option<f64>,
    kappa: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let m = spatial.n_locations();
    let prec = match rho {
        Some(rho) => spatial_precision(&SpatialKernelSpec { kind: SpatialKernel::Car, rho }, spatial)?,
        None => DMatrix::identity(m, m),
    };
    sample_mvn_precision(&(prec / kappa), &DVector::zeros(m), rng, "simulation field precision")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim1Config {
    pub k_true: usize,
    pub spatial: bool,
    pub kappa: f64,
    pub tau: f64,
    pub psi: f64,
    pub rho: f64,
    /// Observation noise variance.
    pub sigma2: f64,
    pub replicates: usize,
}

impl Default for Sim1Config {
    fn default() -> Self {
        Sim1Config { k_true: 3, spatial: true, kappa: 1.0, tau: 1.0, psi: 0.3, rho: 0.99, sigma2: 0.005, replicates: 10 }
    }
}

impl Sim1Config {
    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 {
            return Err(Error::InvalidParameter("k_true must be at least 1".into()));
        }
        for (name, v) in [("kappa", self.kappa), ("tau", self.tau), ("psi", self.psi), ("sigma2", self.sigma2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// Stick variables shared by every dataset of a batch: `alpha[j][l]` is the
/// lattice field of stick `l` in column `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sim1Sticks {
    pub alpha: Vec<Vec<DVector<f64>>>,
}

/// Everything used to generate one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sim1Truth {
    pub sticks: Sim1Sticks,
    /// `theta[j][l]`.
    pub theta: Vec<Vec<f64>>,
    /// Zero-based component of each cell, `xi[j][c]`.
    pub xi: Vec<Vec<usize>>,
    /// `m × k_true`.
    pub lambda: DMatrix<f64>,
    /// `T_total × k_true`.
    pub eta: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub sigma2: f64,
}

/// One simulated dataset: all thirteen visits, the fitted prefix and the truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sim1Dataset {
    pub full: ObservationSet,
    pub fit: ObservationSet,
    pub truth: Sim1Truth,
}

pub fn sim1_sticks<R: Rng + ?Sized>(cfg: &Sim1Config, rng: &mut R) -> Result<Sim1Sticks> {
    cfg.validate()?;
    let spatial = lattice::spatial_structure();
    let rho = cfg.spatial.then_some(cfg.rho);
    let alpha = (0..cfg.k_true)
        .map(|_| {
            (0..SIM1_TRUE_COMPONENTS - 1)
                .map(|_| spatial_field(&spatial, rho, cfg.kappa, rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sim1Sticks { alpha })
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u = uniform_open(rng) * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (l, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return l;
        }
    }
    weights.len() - 1
}

/// Gaussian data from the full factor model with the given sticks.
pub fn generate_sim1<R: Rng + ?Sized>(cfg: &Sim1Config, sticks: &Sim1Sticks, rng: &mut R) -> Result<Sim1Dataset> {
    cfg.validate()?;
    if sticks.alpha.len() != cfg.k_true {
        return Err(Error::DimensionMismatch(format!("{} stick columns for k_true {}", sticks.alpha.len(), cfg.k_true)));
    }
    let m = lattice::N_LOCATIONS;
    let k = cfg.k_true;
    let times = visit_times(SIM1_TOTAL_TIMES);
    let t_len = times.len();

    let mut theta = Vec::with_capacity(k);
    let mut xi = Vec::with_capacity(k);
    let mut lambda = DMatrix::zeros(m, k);
    for (j, col) in sticks.alpha.iter().enumerate() {
        let atoms: Vec<f64> =
            (0..SIM1_TRUE_COMPONENTS).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) / cfg.tau.sqrt()).collect();
        let mut labels = Vec::with_capacity(m);
        for c in 0..m {
            let a: Vec<f64> = col.iter().map(|v| v[c]).collect();
            let l = categorical(&stick_weights(&a), rng);
            lambda[(c, j)] = atoms[l];
            labels.push(l);
        }
        theta.push(atoms);
        xi.push(labels);
    }

    let upsilon = inv_wishart(k as f64 + 1.0, &DMatrix::identity(k, k), rng)?;
    let h = temporal_matrix(&TemporalKernelSpec { kind: TemporalKernel::Exponential, psi: cfg.psi }, &times)?;
    let lh = linalg::cholesky(&h, "simulation temporal correlation")?.l();
    let lu = linalg::cholesky(&upsilon, "simulation factor covariance")?.l();
    let z = DMatrix::from_fn(t_len, k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let eta = &lh * z * lu.transpose();

    let sd = cfg.sigma2.sqrt();
    let mean = &lambda * eta.transpose();
    let y = DMatrix::from_fn(m, t_len, |c, t| mean[(c, t)] + sd * rng.sample::<f64, _>(rand_distr::StandardNormal));
    let full = observation_set(y, times, lattice::spatial_structure());
    let fit = full.truncate_visits(FIT_TIMES)?;
    Ok(Sim1Dataset {
        full,
        fit,
        truth: Sim1Truth { sticks: sticks.clone(), theta, xi, lambda, eta, upsilon, sigma2: cfg.sigma2 },
    })
}

fn observation_set(y: DMatrix<f64>, times: Vec<f64>, spatial: SpatialStructure) -> ObservationSet {
    let (cells, t_len) = y.shape();
    ObservationSet {
        n_locations: cells,
        n_types: 1,
        y,
        trials: None,
        covariates: vec![DMatrix::zeros(cells, 0); t_len],
        times: DVector::from_vec(times),
        spatial,
        missing: DMatrix::from_element(cells, t_len, false),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim2Config {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2: f64,
    pub delta_beta0: f64,
    pub delta_beta1: f64,
    pub delta_sigma2: f64,
    pub rho: f64,
    /// Row-major `κ` of the joint intercept/slope field.
    pub kappa: [[f64; 2]; 2],
    pub replicates: usize,
}

impl Default for Sim2Config {
    fn default() -> Self {
        Sim2Config {
            beta0: -8.0,
            beta1: -4.0,
            sigma2: 3.0,
            delta_beta0: 6.0,
            delta_beta1: 0.0,
            delta_sigma2: 0.0,
            rho: 0.99,
            kappa: [[4.0, -0.5], [-0.5, 2.0]],
            replicates: 10,
        }
    }
}

impl Sim2Config {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2 + self.delta_sigma2 > 0.0) {
            return Err(Error::InvalidParameter("both cluster variances must be positive".into()));
        }
        let k = &self.kappa;
        if k[0][1] != k[1][0] || !(k[0][0] > 0.0 && k[0][0] * k[1][1] - k[0][1] * k[1][0] > 0.0) {
            return Err(Error::InvalidParameter("kappa must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sim2Dataset {
    pub data: ObservationSet,
    /// One-based; the inferior-nasal region is cluster 1.
    pub labels: Vec<usize>,
    pub beta0: DVector<f64>,
    pub beta1: DVector<f64>,
}

/// Point-wise linear trends with a jointly spatial intercept/slope field.
pub fn generate_sim2<R: Rng + ?Sized>(cfg: &Sim2Config, rng: &mut R) -> Result<Sim2Dataset> {
    cfg.validate()?;
    let m = lattice::N_LOCATIONS;
    let spatial = lattice::spatial_structure();
    let region = lattice::inferior_nasal();
    let labels: Vec<usize> = (0..m).map(|c| if region.contains(&c) { 1 } else { 2 }).collect();

    let q = spatial_precision(&SpatialKernelSpec { kind: SpatialKernel::Car, rho: cfg.rho }, &spatial)?;
    let kappa = DMatrix::from_row_slice(2, 2, &[cfg.kappa[0][0], cfg.kappa[0][1], cfg.kappa[1][0], cfg.kappa[1][1]]);
    let kappa_inv = linalg::spd_inverse(&kappa, "kappa")?;
    let field = sample_mvn_precision(&kron(&kappa_inv, &q), &DVector::zeros(2 * m), rng, "intercept/slope precision")?;
    let in_region = |c: usize| labels[c] == 1;
    let beta0 = DVector::from_fn(m, |c, _| field[c] + cfg.beta0 + if in_region(c) { cfg.delta_beta0 } else { 0.0 });
    let beta1 = DVector::from_fn(m, |c, _| field[m + c] + cfg.beta1 + if in_region(c) { cfg.delta_beta1 } else { 0.0 });

    let times = visit_times(FIT_TIMES);
    let y = DMatrix::from_fn(m, times.len(), |c, t| {
        let var = cfg.sigma2 + if in_region(c) { cfg.delta_sigma2 } else { 0.0 };
        beta0[c] + beta1[c] * times[t] + var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    Ok(Sim2Dataset { data: observation_set(y, times, spatial), labels, beta0, beta1 })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Design {
    Sim1(Sim1Config),
    Sim2(Sim2Config),
}

impl Design {
    pub fn replicates(&self) -> usize {
        match self {
            Design::Sim1(c) => c.replicates,
            Design::Sim2(c) => c.replicates,
        }
    }
}

/// Chain length and fitted factor count shared by every fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub k: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings { n_iter: 2000, burn_in: 1000, thin: 1, k: 6 }
    }
}

/// Base model fitted in both designs before a variant is applied.
pub fn base_spec(k: usize) -> ModelSpec {
    let mut spec = ModelSpec { k, rho: ParamPrior::Fixed(0.99), psi: ParamPrior::Auto, ..ModelSpec::default() };
    spec.hyper.kappa_df = Some(0.002);
    spec.hyper.kappa_scale = 0.002;
    spec
}

/// Metrics of one fit; `NaN` where a metric does not apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub replicate: usize,
    pub model: ModelVariant,
    pub waic: f64,
    pub crps: f64,
    pub ss_psbp: f64,
    pub ss_raw: f64,
    pub ss_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelVariant,
    pub mean_waic: f64,
    pub mean_crps: f64,
    pub median_ss_psbp: f64,
    pub median_ss_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub rows: Vec<ExperimentRow>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        fmt_f64(v)
    }
}

impl ExperimentResults {
    /// Means of WAIC/CRPS and medians of the SS quantities per model, in
    /// model order. Missing metrics are skipped.
    pub fn summary(&self) -> Vec<ModelSummary> {
        let mut models: Vec<ModelVariant> = self.rows.iter().map(|r| r.model).collect();
        models.sort();
        models.dedup();
        models
            .into_iter()
            .map(|model| {
                let pick = |f: fn(&ExperimentRow) -> f64| -> Vec<f64> {
                    self.rows.iter().filter(|r| r.model == model).map(f).filter(|v| !v.is_nan()).collect()
                };
                ModelSummary {
                    model,
                    mean_waic: mean(&pick(|r| r.waic)),
                    mean_crps: mean(&pick(|r| r.crps)),
                    median_ss_psbp: median(&pick(|r| r.ss_psbp)),
                    median_ss_ratio: median(&pick(|r| r.ss_ratio)),
                }
            })
            .collect()
    }

    pub fn model_summary(&self, model: ModelVariant) -> Option<ModelSummary> {
        self.summary().into_iter().find(|s| s.model == model)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "model", "waic", "crps", "ss_psbp", "ss_raw", "ss_ratio"])?;
        for r in &self.rows {
            w.write_record([
                (r.replicate + 1).to_string(),
                r.model.name().to_string(),
                fmt_metric(r.waic),
                fmt_metric(r.crps),
                fmt_metric(r.ss_psbp),
                fmt_metric(r.ss_raw),
                fmt_metric(r.ss_ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let cell = |v: f64| if v.is_nan() { "-".to_string() } else { format!("{v:.3}") };
        writeln!(out, "{:<6} {:>12} {:>10} {:>10} {:>10}", "model", "WAIC", "CRPS", "SS_PSBP", "SS_Ratio")?;
        for s in self.summary() {
            writeln!(
                out,
                "{:<6} {:>12} {:>10} {:>10} {:>10}",
                s.model.name(),
                cell(s.mean_waic),
                cell(s.mean_crps),
                cell(s.median_ss_psbp),
                cell(s.median_ss_ratio)
            )?;
        }
        Ok(())
    }
}

fn sim1_metrics(
    dataset: &Sim1Dataset,
    spec: &ModelSpec,
    run: RunSettings,
) -> Result<(f64, f64)> {
    let draws = run_chain(spec, &dataset.fit, run, 0)?;
    let waic = waic_store(&draws.loglik)?;
    let times = dataset.full.times.as_slice();
    let req = PpdRequest { new_times: times[FIT_TIMES..].to_vec(), new_covariates: None, trials: None };
    let ppd = ppd_sample(&draws, &req, run.seed)?;
    let last = SIM1_TOTAL_TIMES - FIT_TIMES - 1;
    let cells = dataset.full.n_cells();
    let mut total = 0.0;
    for c in 0..cells {
        total += crps(&ppd.samples(c, last), dataset.full.y[(c, SIM1_TOTAL_TIMES - 1)])?;
    }
    Ok((waic, total / cells as f64))
}

fn sim2_metrics(dataset: &Sim2Dataset, spec: &ModelSpec, run: RunSettings) -> Result<(f64, f64)> {
    let data = dataset.data.clone().with_intercept();
    let draws = run_chain(spec, &data, run, 0)?;
    let waic = waic_store(&draws.loglik)?;
    if !spec.loadings_prior.is_psbp() {
        return Ok((waic, f64::NAN));
    }
    let g = cocluster_all(&draws)?;
    let kstar = select_kstar(&g).max(1);
    let w = build_w(&draws, kstar)?;
    let (_, _, ss) = ss_quantities(&w, &dataset.labels)?;
    Ok((waic, ss))
}

/// Fits every model to every replicate. Datasets, fits and predictions each
/// draw from their own stream of `seed`, so results do not depend on the
/// thread count.
pub fn run_experiment(
    design: &Design,
    models: &[ModelVariant],
    settings: ExperimentSettings,
    seed: u64,
) -> Result<ExperimentResults> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("no models requested".into()));
    }
    let reps = design.replicates();
    if reps == 0 {
        return Err(Error::InvalidParameter("replicates must be at least 1".into()));
    }
    let base = base_spec(settings.k);
    let run = |r: usize, mi: usize| RunSettings {
        n_iter: settings.n_iter,
        burn_in: settings.burn_in,
        thin: settings.thin,
        seed: fit_seed(seed, r, mi),
    };
    run(0, 0).validate()?;
    let jobs: Vec<(usize, usize)> = (0..reps).flat_map(|r| (0..models.len()).map(move |mi| (r, mi))).collect();

    let rows: Vec<Result<ExperimentRow>> = match design {
        Design::Sim1(cfg) => {
            let sticks = sim1_sticks(cfg, &mut derived_rng(seed, u64::MAX))?;
            let datasets = (0..reps)
                .map(|r| generate_sim1(cfg, &sticks, &mut derived_rng(seed, r as u64)))
                .collect::<Result<Vec<_>>>()?;
            jobs.par_iter()
                .map(|&(r, mi)| {
                    let spec = models[mi].apply(&base);
                    let (waic, crps) = sim1_metrics(&datasets[r], &spec, run(r, mi))?;
                    Ok(ExperimentRow {
                        replicate: r,
                        model: models[mi],
                        waic,
                        crps,
                        ss_psbp: f64::NAN,
                        ss_raw: f64::NAN,
                        ss_ratio: f64::NAN,
                    })
                })
                .collect()
        }
        Design::Sim2(cfg) => {
            let datasets = (0..reps)
                .map(|r| generate_sim2(cfg, &mut derived_rng(seed, r as u64)))
                .collect::<Result<Vec<_>>>()?;
            let raw = datasets
                .iter()
                .map(|d| ss_quantities(&d.data.y, &d.labels).map(|s| s.2))
                .collect::<Result<Vec<_>>>()?;
            jobs.par_iter()
                .map(|&(r, mi)| {
                    let spec = models[mi].apply(&base);
                    let (waic, ss_psbp) = sim2_metrics(&datasets[r], &spec, run(r, mi))?;
                    Ok(ExperimentRow {
                        replicate: r,
                        model: models[mi],
                        waic,
                        crps: f64::NAN,
                        ss_psbp,
                        ss_raw: raw[r],
                        ss_ratio: ss_psbp / raw[r],
                    })
                })
                .collect()
        }
    };
    Ok(ExperimentResults { rows: rows.into_iter().collect::<Result<Vec<_>>>()? })
}

#[cfg(test)]
mod tests;
