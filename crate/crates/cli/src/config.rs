//! TOML run configuration.
//!
//! Every table rejects unknown keys. Relative paths are resolved against the
//! directory of the configuration file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use spfactor::clustering::Side;
use spfactor::kernels::{SpatialKernel, TemporalKernel};
use spfactor::likelihood::{Family, LikelihoodSpec};
use spfactor::model::{LoadingsPrior, ModelSpec, ModelVariant, ParamPrior, Shrinkage};
use spfactor::psbp::Truncation;
use spfactor::simulation::{Sim1Config, Sim2Config};

use crate::error::{CliError, Result};

/// Values supplied on the command line or through `SPFACTOR_*` variables;
/// they take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataPaths {
    pub observations: PathBuf,
    pub spatial: PathBuf,
    pub times: PathBuf,
    /// Header of the trials column (binomial only).
    pub trials_column: Option<String>,
    /// Held-out observations (`time_value,type_id,location_id,y`) scored by `diagnose`.
    pub holdout: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictConfig {
    pub new_times: Vec<f64>,
    /// Trials at every new time; defaults to each cell's last observed count.
    pub trials: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterConfig {
    pub k_max: usize,
    pub reference_sets: usize,
    pub side: Side,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Sim1,
    Sim2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateConfig {
    pub design: DesignKind,
    /// Which dataset stream of the seed to generate.
    pub replicate: usize,
    pub sim1: Sim1Config,
    pub sim2: Sim2Config,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub models: Vec<ModelVariant>,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub k: usize,
}

/// Fully validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub threads: Option<usize>,
    pub data: Option<DataPaths>,
    pub spec: ModelSpec,
    /// Prepend a column of ones to the covariates.
    pub intercept: bool,
    pub chain: ChainConfig,
    pub predict: Option<PredictConfig>,
    pub cluster: ClusterConfig,
    pub simulate: SimulateConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    output: Option<PathBuf>,
    threads: Option<usize>,
    data: Option<RawData>,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    chain: RawChain,
    predict: Option<RawPredict>,
    #[serde(default)]
    cluster: RawCluster,
    #[serde(default)]
    simulate: RawSimulate,
    #[serde(default)]
    experiment: RawExperiment,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    observations: PathBuf,
    spatial: PathBuf,
    times: PathBuf,
    trials_column: Option<String>,
    holdout: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTruncation {
    Finite(usize),
    Named(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawPrior {
    Fixed(f64),
    Named(String),
    Bounds { lower: f64, upper: f64, a: Option<f64>, b: Option<f64> },
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    family: Option<Family>,
    k: Option<usize>,
    truncation: Option<RawTruncation>,
    variant: Option<String>,
    loadings: Option<LoadingsPrior>,
    shrinkage: Option<Shrinkage>,
    spatial_kernel: Option<SpatialKernel>,
    rho: Option<RawPrior>,
    temporal_kernel: Option<TemporalKernel>,
    psi: Option<RawPrior>,
    pooled_variance: Option<bool>,
    intercept: Option<bool>,
    a1: Option<f64>,
    a2: Option<f64>,
    sigma_shape: Option<f64>,
    sigma_scale: Option<f64>,
    kappa_df: Option<f64>,
    kappa_scale: Option<f64>,
    upsilon_df: Option<f64>,
    upsilon_scale: Option<f64>,
    beta_variance: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    n_iter: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    chains: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPredict {
    new_times: Vec<f64>,
    trials: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCluster {
    k_max: Option<usize>,
    reference_sets: Option<usize>,
    side: Option<Side>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    design: Option<DesignKind>,
    replicate: Option<usize>,
    #[serde(default)]
    sim1: Sim1Config,
    #[serde(default)]
    sim2: Sim2Config,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    models: Option<Vec<String>>,
    n_iter: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    k: Option<usize>,
}

fn classify(e: toml::de::Error) -> CliError {
    let msg = e.message().to_string();
    if msg.contains("unknown field") {
        CliError::UnknownKey(msg)
    } else if msg.contains("missing field") {
        CliError::MissingRequired(msg)
    } else {
        CliError::TypeError(msg)
    }
}

fn prior(raw: Option<RawPrior>, default: ParamPrior, name: &str) -> Result<ParamPrior> {
    Ok(match raw {
        None => default,
        Some(RawPrior::Fixed(v)) => ParamPrior::Fixed(v),
        Some(RawPrior::Named(s)) if s == "auto" => ParamPrior::Auto,
        Some(RawPrior::Named(s)) => {
            return Err(CliError::TypeError(format!("{name}: expected a number, \"auto\" or a bounds table, got {s:?}")))
        }
        Some(RawPrior::Bounds { lower, upper, a: None, b: None }) => ParamPrior::Uniform { lower, upper },
        Some(RawPrior::Bounds { lower, upper, a, b }) => {
            ParamPrior::TransformedBeta { lower, upper, a: a.unwrap_or(1.0), b: b.unwrap_or(1.0) }
        }
    })
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn model_spec(raw: RawModel) -> Result<(ModelSpec, bool)> {
    let mut spec = ModelSpec::default();
    if let Some(v) = &raw.variant {
        spec = parse_variant(v)?.apply(&spec);
    }
    if let Some(f) = raw.family {
        spec.likelihood = LikelihoodSpec::new(f);
    }
    if let Some(k) = raw.k {
        spec.k = k;
    }
    spec.truncation = match raw.truncation {
        None => spec.truncation,
        Some(RawTruncation::Finite(l)) => Truncation::Finite(l),
        Some(RawTruncation::Named(s)) if s == "slice" => Truncation::Slice,
        Some(RawTruncation::Named(s)) => {
            return Err(CliError::TypeError(format!("truncation: expected \"slice\" or an integer, got {s:?}")))
        }
    };
    if let Some(l) = raw.loadings {
        spec.loadings_prior = l;
    }
    if let Some(s) = raw.shrinkage {
        spec.shrinkage = s;
    }
    if let Some(s) = raw.spatial_kernel {
        spec.spatial_kernel = s;
    }
    if let Some(t) = raw.temporal_kernel {
        spec.temporal_kernel = t;
    }
    spec.rho = prior(raw.rho, spec.rho, "rho")?;
    spec.psi = prior(raw.psi, spec.psi, "psi")?;
    if let Some(v) = raw.pooled_variance {
        spec.pooled_variance = v;
    }
    let h = &mut spec.hyper;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut h.a1, raw.a1);
    set(&mut h.a2, raw.a2);
    set(&mut h.sigma_shape, raw.sigma_shape);
    set(&mut h.sigma_scale, raw.sigma_scale);
    set(&mut h.kappa_scale, raw.kappa_scale);
    set(&mut h.upsilon_scale, raw.upsilon_scale);
    set(&mut h.beta_variance, raw.beta_variance);
    if raw.kappa_df.is_some() {
        h.kappa_df = raw.kappa_df;
    }
    if raw.upsilon_df.is_some() {
        h.upsilon_df = raw.upsilon_df;
    }
    Ok((spec, raw.intercept.unwrap_or(false)))
}

fn parse_variant(name: &str) -> Result<ModelVariant> {
    name.parse().map_err(|_| CliError::TypeError(format!("unknown model variant {name:?} (expected M1..M5)")))
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(CliError::TypeError(format!("{name} must be at least 1")));
    }
    Ok(v)
}

/// Parses configuration text with no overrides, resolving paths against the
/// current directory.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &Overrides::default(), Path::new("."))
}

/// Parses configuration text, applies `overrides` and validates the result.
pub fn parse_config_with(text: &str, overrides: &Overrides, base: &Path) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(classify)?;
    let seed = overrides
        .seed
        .or(raw.seed)
        .ok_or_else(|| CliError::MissingRequired("seed (set `seed` or pass --seed)".into()))?;
    let output = match (&overrides.output, raw.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(base, o),
        (None, None) => return Err(CliError::MissingRequired("output (set `output` or pass --output)".into())),
    };
    let (spec, intercept) = model_spec(raw.model)?;
    let data = raw.data.map(|d| DataPaths {
        observations: resolve(base, d.observations),
        spatial: resolve(base, d.spatial),
        times: resolve(base, d.times),
        trials_column: d.trials_column,
        holdout: d.holdout.map(|h| resolve(base, h)),
    });
    if spec.likelihood.family == Family::Binomial && data.as_ref().and_then(|d| d.trials_column.as_ref()).is_none() {
        return Err(CliError::MissingRequired("data.trials_column (binomial family)".into()));
    }

    let chain = ChainConfig {
        n_iter: raw.chain.n_iter.unwrap_or(2000),
        burn_in: raw.chain.burn_in.unwrap_or(1000),
        thin: positive("chain.thin", raw.chain.thin.unwrap_or(1))?,
        chains: positive("chain.chains", overrides.chains.or(raw.chain.chains).unwrap_or(1))?,
    };
    if chain.n_iter <= chain.burn_in {
        return Err(CliError::TypeError(format!(
            "chain.n_iter ({}) must exceed chain.burn_in ({})",
            chain.n_iter, chain.burn_in
        )));
    }
    let threads = overrides.threads.or(raw.threads).map(|t| positive("threads", t)).transpose()?;

    let predict = raw.predict.map(|p| PredictConfig { new_times: p.new_times, trials: p.trials });
    let cluster = ClusterConfig {
        k_max: positive("cluster.k_max", raw.cluster.k_max.unwrap_or(8))?,
        reference_sets: positive("cluster.reference_sets", raw.cluster.reference_sets.unwrap_or(50))?,
        side: raw.cluster.side.unwrap_or(Side::Lower),
    };
    let design = raw.simulate.design.unwrap_or(DesignKind::Sim1);
    let simulate = SimulateConfig {
        design,
        replicate: raw.simulate.replicate.unwrap_or(0),
        sim1: raw.simulate.sim1,
        sim2: raw.simulate.sim2,
    };
    let models = match raw.experiment.models {
        Some(names) => names.iter().map(|n| parse_variant(n)).collect::<Result<Vec<_>>>()?,
        None => match design {
            DesignKind::Sim1 => ModelVariant::ALL.to_vec(),
            DesignKind::Sim2 => vec![ModelVariant::M1, ModelVariant::M2, ModelVariant::M3],
        },
    };
    let experiment = ExperimentConfig {
        models,
        n_iter: raw.experiment.n_iter.unwrap_or(2000),
        burn_in: raw.experiment.burn_in.unwrap_or(1000),
        thin: positive("experiment.thin", raw.experiment.thin.unwrap_or(1))?,
        k: raw.experiment.k.unwrap_or(6),
    };

    Ok(RunConfig {
        seed,
        output,
        threads,
        data,
        spec,
        intercept,
        chain,
        predict,
        cluster,
        simulate,
        experiment,
    })
}
