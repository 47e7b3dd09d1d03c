//! Subcommand implementations. Each reads its inputs, writes its outputs
//! atomically into the output directory and records itself in the manifest.

use std::path::Path;

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use spfactor::clustering::{summarize, ClusterSettings};
use spfactor::data::ObservationSet;
use spfactor::diagnostics::{crps, geweke_z, DiagnosticsReport, WaicAccumulator};
use spfactor::draws::{Acceptance, DrawsMeta, PosteriorDraws};
use spfactor::likelihood::Family;
use spfactor::model::ModelSpec;
use spfactor::prediction::{ppd_sample, PpdDraws, PpdRequest};
use spfactor::sampler::{run_chains, RunSettings};
use spfactor::simulation::{
    derived_rng, generate_sim1, generate_sim2, run_experiment, sim1_sticks, Design, ExperimentSettings,
};

use crate::config::{DesignKind, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{self, read_json, write_atomic, write_json, ManifestEntry};

pub const DRAWS: &str = "draws.csv";
pub const LOGLIK: &str = "loglik.csv";
pub const META: &str = "meta.json";
pub const PPD: &str = "ppd.csv";
pub const CLUSTERS: &str = "clusters.csv";
pub const CLUSTER_SUMMARY: &str = "cluster.json";
pub const DIAGNOSTICS_TEXT: &str = "diagnostics.txt";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";
pub const OBSERVATIONS: &str = "observations.csv";
pub const SPATIAL: &str = "spatial.csv";
pub const TIMES: &str = "times.csv";
pub const HOLDOUT: &str = "holdout.csv";
pub const TRUTH: &str = "truth.json";
pub const EXPERIMENT_CSV: &str = "experiment.csv";
pub const EXPERIMENT_TEXT: &str = "experiment.txt";

// Offsets that give prediction and clustering their own streams of the seed.
const PREDICT_STREAM: u64 = 0x7072_6564;
const CLUSTER_STREAM: u64 = 0x636c_7573;

/// Everything besides the draws needed to reload a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub draws: DrawsMeta,
    pub spec: ModelSpec,
    pub intercept: bool,
    pub acceptance: Vec<Acceptance>,
}

/// Identifies a run for the manifest.
pub struct RunContext<'a> {
    pub cfg: &'a RunConfig,
    pub config_hash: String,
}

impl RunContext<'_> {
    fn out(&self, name: &str) -> std::path::PathBuf {
        self.cfg.output.join(name)
    }

    fn record(&self, command: &str, files: &[&str]) -> Result<()> {
        output::record(
            &self.cfg.output,
            command,
            ManifestEntry {
                config_sha256: self.config_hash.clone(),
                seed: self.cfg.seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                core_version: spfactor::VERSION.to_string(),
                files: files.iter().map(|f| f.to_string()).collect(),
            },
        )
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<ObservationSet> {
    let paths = cfg.data.as_ref().ok_or_else(|| CliError::MissingRequired("[data] section".into()))?;
    let data = ObservationSet::read_csv(
        output::open_required(&paths.observations)?,
        output::open_required(&paths.spatial)?,
        output::open_required(&paths.times)?,
        paths.trials_column.as_deref(),
    )?;
    Ok(if cfg.intercept { data.with_intercept() } else { data })
}

pub fn load_fit(dir: &Path) -> Result<(FitMeta, PosteriorDraws)> {
    let meta: FitMeta = read_json(&dir.join(META))?;
    let draws = PosteriorDraws::read_csv(meta.draws.clone(), output::open_required(&dir.join(DRAWS))?)?;
    let loglik = PosteriorDraws::read_loglik_csv(meta.draws.observed.len(), output::open_required(&dir.join(LOGLIK))?)?;
    let post = PosteriorDraws { meta: meta.draws.clone(), draws, loglik, acceptance: meta.acceptance.clone() };
    Ok((meta, post))
}

pub fn fit(ctx: &RunContext) -> Result<()> {
    let cfg = ctx.cfg;
    let data = load_data(cfg)?;
    output::prepare_dir(&cfg.output)?;
    let settings =
        RunSettings { n_iter: cfg.chain.n_iter, burn_in: cfg.chain.burn_in, thin: cfg.chain.thin, seed: cfg.seed };
    let post = run_chains(&cfg.spec, &data, settings, cfg.chain.chains)?;
    info!("fit: {} draws from {} chain(s)", post.len(), cfg.chain.chains);
    write_atomic(&ctx.out(DRAWS), |w| Ok(post.write_csv(w)?))?;
    write_atomic(&ctx.out(LOGLIK), |w| Ok(post.write_loglik_csv(w)?))?;
    let meta = FitMeta {
        draws: post.meta.clone(),
        spec: cfg.spec.clone(),
        intercept: cfg.intercept,
        acceptance: post.acceptance.clone(),
    };
    write_json(&ctx.out(META), &meta)?;
    ctx.record("fit", &[DRAWS, LOGLIK, META])
}

fn ppd_request(cfg: &RunConfig, meta: &FitMeta) -> Result<PpdRequest> {
    let pc = cfg.predict.as_ref().ok_or_else(|| CliError::MissingRequired("[predict] new_times".into()))?;
    let cells = meta.draws.n_cells();
    let new_covariates = match (meta.draws.p, meta.intercept) {
        (0, _) => None,
        (1, true) => Some(vec![DMatrix::from_element(cells, 1, 1.0); pc.new_times.len()]),
        _ => {
            return Err(spfactor::Error::PreconditionViolation(
                "prediction needs future covariates; only an intercept can be extended".into(),
            )
            .into())
        }
    };
    let trials = match (meta.draws.family, pc.trials) {
        (Family::Gaussian, _) => None,
        (Family::Binomial, Some(n)) => Some(DVector::from_element(cells, n)),
        (Family::Binomial, None) => {
            let data = load_data(cfg)?;
            let n = data.trials.as_ref().ok_or(spfactor::Error::MissingTrials)?;
            Some(DVector::from_fn(cells, |c, _| {
                (0..data.n_times()).rev().find(|&t| data.is_observed(c, t)).map_or(0.0, |t| n[(c, t)])
            }))
        }
    };
    Ok(PpdRequest { new_times: pc.new_times.clone(), new_covariates, trials })
}

fn predictive(cfg: &RunConfig, meta: &FitMeta, post: &PosteriorDraws) -> Result<PpdDraws> {
    let req = ppd_request(cfg, meta)?;
    Ok(ppd_sample(post, &req, cfg.seed ^ PREDICT_STREAM)?)
}

pub fn predict(ctx: &RunContext) -> Result<()> {
    let (meta, post) = load_fit(&ctx.cfg.output)?;
    let ppd = predictive(ctx.cfg, &meta, &post)?;
    write_atomic(&ctx.out(PPD), |w| Ok(ppd.write_csv(w)?))?;
    ctx.record("predict", &[PPD])
}

pub fn cluster(ctx: &RunContext) -> Result<()> {
    let cfg = ctx.cfg;
    let (meta, post) = load_fit(&cfg.output)?;
    let settings = ClusterSettings {
        k_max: cfg.cluster.k_max,
        reference_sets: cfg.cluster.reference_sets,
        seed: cfg.seed ^ CLUSTER_STREAM,
        side: cfg.cluster.side,
    };
    // Trend p-values come from the predictive means when enough future times
    // are configured to fit a slope.
    let ppd = match &cfg.predict {
        Some(p) if p.new_times.len() >= 3 => Some(predictive(cfg, &meta, &post)?),
        _ => None,
    };
    let mean = ppd.as_ref().map(|p| (p.mean(), p.new_times.clone()));
    let summary = summarize(&post, &settings, mean.as_ref().map(|(m, t)| (m, t.as_slice())))?;
    info!("cluster: k* = {}, {} clusters", summary.kstar, summary.gap_k);
    write_atomic(&ctx.out(CLUSTERS), |w| Ok(summary.write_csv(meta.draws.n_locations, w)?))?;
    write_json(&ctx.out(CLUSTER_SUMMARY), &summary)?;
    ctx.record("cluster", &[CLUSTERS, CLUSTER_SUMMARY])
}

/// `time_value,type_id,location_id,y` rows of held-out observations.
fn read_holdout(path: &Path, n_locations: usize) -> Result<Vec<(f64, usize, f64)>> {
    let mut r = csv::Reader::from_reader(output::open_required(path)?);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let (time, o, i, y): (f64, usize, usize, f64) =
            rec.map_err(|e| spfactor::Error::Format(format!("{}: {e}", path.display())))?;
        if o == 0 || i == 0 || i > n_locations {
            return Err(spfactor::Error::IndexOutOfRange(format!("holdout cell ({o}, {i})")).into());
        }
        rows.push((time, (o - 1) * n_locations + (i - 1), y));
    }
    Ok(rows)
}

/// Scalar traces checked with the Geweke statistic.
fn geweke_names(meta: &DrawsMeta) -> Vec<String> {
    let mut names = vec!["rho".to_string(), "psi".to_string()];
    names.extend((1..=meta.k).map(|j| format!("delta[{j}]")));
    names.extend((1..=meta.n_types).map(|a| format!("kappa[{a},{a}]")));
    names.extend((1..=meta.k).map(|j| format!("upsilon[{j},{j}]")));
    names.extend((1..=meta.n_cells()).map(|c| format!("sigma2[{c}]")));
    names
}

pub fn diagnose(ctx: &RunContext) -> Result<()> {
    let cfg = ctx.cfg;
    let (meta, post) = load_fit(&cfg.output)?;
    let mut report = DiagnosticsReport { n_draws: post.len(), ..DiagnosticsReport::default() };
    let mut acc = WaicAccumulator::new(post.loglik.rows());
    let mut push_err = None;
    post.loglik.for_each_column(|col| {
        if let Err(e) = acc.push(col) {
            push_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = push_err {
        return Err(e.into());
    }
    if let Ok((lppd, p)) = acc.components() {
        report.lppd = Some(lppd);
        report.p_waic = Some(p);
        report.waic = Some(-2.0 * (lppd - p));
    }
    let chains: Vec<usize> = post.acceptance.iter().map(|a| a.chain).collect();
    for name in geweke_names(&meta.draws) {
        let Some(trace) = post.trace(&name) else { continue };
        for &chain in &chains {
            let x: Vec<f64> = post.chain_indices(chain).into_iter().map(|i| trace[i]).collect();
            // constant traces (fixed parameters, σ² in binomial fits) have no z
            if let Ok(z) = geweke_z(&x, 0.1, 0.5) {
                report.geweke.insert(format!("chain{}.{name}", chain + 1), z);
            }
        }
    }
    report.acceptance_rho = post.acceptance.iter().map(|a| a.rho).collect();
    report.acceptance_psi = post.acceptance.iter().map(|a| a.psi).collect();
    if let Some(path) = cfg.data.as_ref().and_then(|d| d.holdout.as_ref()) {
        let ppd = predictive(cfg, &meta, &post)?;
        let rows = read_holdout(path, meta.draws.n_locations)?;
        let mut total = 0.0;
        for &(time, cell, y) in &rows {
            let t = ppd.new_times.iter().position(|&x| (x - time).abs() <= 1e-9 * x.abs().max(1.0)).ok_or_else(|| {
                CliError::MissingRequired(format!("holdout time {time} is not among predict.new_times"))
            })?;
            total += crps(&ppd.samples(cell, t), y)?;
        }
        if !rows.is_empty() {
            report.crps = Some(total / rows.len() as f64);
            report.extra.insert("holdout_rows".into(), rows.len() as f64);
        }
    }
    write_atomic(&ctx.out(DIAGNOSTICS_TEXT), |w| Ok(report.write_text(w)?))?;
    write_atomic(&ctx.out(DIAGNOSTICS_JSON), |w| {
        report.write_json(&mut *w)?;
        writeln!(w)?;
        Ok(())
    })?;
    ctx.record("diagnose", &[DIAGNOSTICS_TEXT, DIAGNOSTICS_JSON])
}

#[derive(Serialize)]
struct Sim2Truth<'a> {
    labels: &'a [usize],
    beta0: Vec<f64>,
    beta1: Vec<f64>,
}

fn write_dataset(ctx: &RunContext, data: &ObservationSet) -> Result<()> {
    write_atomic(&ctx.out(OBSERVATIONS), |w| Ok(data.write_observations(w)?))?;
    write_atomic(&ctx.out(SPATIAL), |w| Ok(data.write_spatial(w)?))?;
    write_atomic(&ctx.out(TIMES), |w| Ok(data.write_times(w)?))
}

pub fn simulate(ctx: &RunContext) -> Result<()> {
    let cfg = ctx.cfg;
    let sim = &cfg.simulate;
    output::prepare_dir(&cfg.output)?;
    let stream = sim.replicate as u64;
    match sim.design {
        DesignKind::Sim1 => {
            sim.sim1.validate()?;
            let sticks = sim1_sticks(&sim.sim1, &mut derived_rng(cfg.seed, u64::MAX))?;
            let ds = generate_sim1(&sim.sim1, &sticks, &mut derived_rng(cfg.seed, stream))?;
            write_dataset(ctx, &ds.fit)?;
            let (full, t_fit) = (&ds.full, ds.fit.n_times());
            write_atomic(&ctx.out(HOLDOUT), |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["time_value", "type_id", "location_id", "y"])
                    .map_err(spfactor::Error::from)?;
                for t in t_fit..full.n_times() {
                    for c in 0..full.n_cells() {
                        let (o, i) = full.cell_coords(c);
                        out.write_record([
                            spfactor::data::fmt_f64(full.times[t]),
                            (o + 1).to_string(),
                            (i + 1).to_string(),
                            spfactor::data::fmt_f64(full.y[(c, t)]),
                        ])
                        .map_err(spfactor::Error::from)?;
                    }
                }
                out.flush()?;
                Ok(())
            })?;
            write_json(&ctx.out(TRUTH), &ds.truth)?;
            ctx.record("simulate", &[OBSERVATIONS, SPATIAL, TIMES, HOLDOUT, TRUTH])
        }
        DesignKind::Sim2 => {
            let ds = generate_sim2(&sim.sim2, &mut derived_rng(cfg.seed, stream))?;
            write_dataset(ctx, &ds.data)?;
            let truth =
                Sim2Truth { labels: &ds.labels, beta0: ds.beta0.iter().copied().collect(), beta1: ds.beta1.iter().copied().collect() };
            write_json(&ctx.out(TRUTH), &truth)?;
            ctx.record("simulate", &[OBSERVATIONS, SPATIAL, TIMES, TRUTH])
        }
    }
}

pub fn experiment(ctx: &RunContext) -> Result<()> {
    let cfg = ctx.cfg;
    let design = match cfg.simulate.design {
        DesignKind::Sim1 => Design::Sim1(cfg.simulate.sim1.clone()),
        DesignKind::Sim2 => Design::Sim2(cfg.simulate.sim2.clone()),
    };
    let e = &cfg.experiment;
    let settings = ExperimentSettings { n_iter: e.n_iter, burn_in: e.burn_in, thin: e.thin, k: e.k };
    output::prepare_dir(&cfg.output)?;
    let results = run_experiment(&design, &e.models, settings, cfg.seed)?;
    write_atomic(&ctx.out(EXPERIMENT_CSV), |w| Ok(results.write_csv(w)?))?;
    write_atomic(&ctx.out(EXPERIMENT_TEXT), |w| Ok(results.write_text(w)?))?;
    ctx.record("experiment", &[EXPERIMENT_CSV, EXPERIMENT_TEXT])
}
