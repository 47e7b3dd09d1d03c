//! Acceptance criteria, one line each.
//!
//! Runs every criterion (or only those whose numbers are given as arguments),
//! prints `PASS` or `FAIL` with the measured quantities and a count of
//! failures. With `SPFACTOR_ACCEPTANCE_STRICT=1` any failure also makes the
//! process exit non-zero.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spfactor::clustering::{cocluster_probability, select_kstar};
use spfactor::data::{ObservationSet, SpatialStructure};
use spfactor::diagnostics::{batch_means_se, crps, geweke_z, waic};
use spfactor::dist::norm_cdf;
use spfactor::kernels::TemporalKernel;
use spfactor::model::{Hyper, ModelSpec, ModelVariant, ParamPrior};
use spfactor::pg::{pg_mean, pg_sample};
use spfactor::prediction::{conditional_factor_moments, conditional_time_operators};
use spfactor::psbp::{beta_moment_1, beta_moment_2, psbp_process_covariance, psbp_process_variance, stick_weights};
use spfactor::sampler::{run_chain, RunSettings, Sampler};
use spfactor::simulation::{
    derived_rng, generate_sim1, run_experiment, sim1_sticks, Design, ExperimentSettings, Sim1Config, Sim2Config,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> spfactor::Result<Outcome> {
    Ok(Outcome { pass, detail })
}

/// 1. Stick weights sum to one; slice invariants hold after every sweep.
fn stick_normalization() -> spfactor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let l = rng.random_range(1..=10);
        let alpha: Vec<f64> = (0..l - 1).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let w = stick_weights(&alpha);
        assert_eq!(w.len(), l);
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    let cfg = Sim1Config::default();
    let ds = generate_sim1(&cfg, &sim1_sticks(&cfg, &mut derived_rng(5, u64::MAX))?, &mut derived_rng(5, 0))?;
    let spec = ModelVariant::M1.apply(&spfactor::simulation::base_spec(6));
    let mut s = Sampler::new(&spec, &ds.fit, 2, 0)?;
    s.burn_in = 100;
    let mut violations = 0;
    for _ in 0..500 {
        s.sweep()?;
        if s.check_invariants().is_err() {
            violations += 1;
        }
    }
    outcome(
        worst <= 1e-12 && violations == 0,
        format!("max |sum w - 1| = {worst:.1e} (tol 1e-12), invariant violations in 500 sweeps = {violations}"),
    )
}

/// 2. Pólya-Gamma sample means within 1% of the analytic mean.
fn pg_moments() -> spfactor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for b in [1u32, 3] {
        for c in [0.0, 1.0, 2.0] {
            let n = 100_000;
            let mean = (0..n).map(|_| pg_sample(b, c, &mut rng)).sum::<f64>() / n as f64;
            let rel = (mean / pg_mean(b as f64, c) - 1.0).abs();
            worst = worst.max(rel);
            parts.push(format!("({b},{c}) {:.3}%", 100.0 * rel));
        }
    }
    outcome(worst < 0.01, format!("relative error {} (tol 1%)", parts.join(", ")))
}

/// 3. Monte-Carlo variance and covariance of `G(B)` against the closed forms.
///
/// `G(B)(s) = Σ_l w_l(s) 1{θ_l ∈ B} + R(s) G₀(B)` with `L` open sticks and
/// the leftover `R(s)` on the base measure; the atoms are shared by both cells.
fn psbp_moments() -> spfactor::Result<Outcome> {
    let (l, reps, g0b, corr): (usize, usize, f64, f64) = (5, 100_000, 0.3, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for mu in [0.0, 0.5] {
        for sigma2 in [0.5f64, 1.0] {
            let cov = corr * sigma2;
            let sd = sigma2.sqrt();
            // α(s') = ρα(s) + √(σ²(1 − ρ²)) ε
            let resid_sd = (sigma2 * (1.0 - corr * corr)).sqrt();
            let (mut g1, mut g2) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
            for _ in 0..reps {
                let (mut rem1, mut rem2, mut v1, mut v2) = (1.0, 1.0, 0.0, 0.0);
                for _ in 0..l {
                    let e1: f64 = rng.sample(StandardNormal);
                    let e2: f64 = rng.sample(StandardNormal);
                    let a1 = mu + sd * e1;
                    let a2 = mu + corr * (a1 - mu) + resid_sd * e2;
                    let in_b = if rng.random::<f64>() < g0b { 1.0 } else { 0.0 };
                    let (u1, u2) = (norm_cdf(a1), norm_cdf(a2));
                    v1 += rem1 * u1 * in_b;
                    v2 += rem2 * u2 * in_b;
                    rem1 *= 1.0 - u1;
                    rem2 *= 1.0 - u2;
                }
                g1.push(v1 + rem1 * g0b);
                g2.push(v2 + rem2 * g0b);
            }
            let n = reps as f64;
            let (m1, m2) = (g1.iter().sum::<f64>() / n, g2.iter().sum::<f64>() / n);
            let var = g1.iter().map(|x| (x - m1).powi(2)).sum::<f64>() / (n - 1.0);
            let cv = g1.iter().zip(&g2).map(|(x, y)| (x - m1) * (y - m2)).sum::<f64>() / (n - 1.0);
            let b1 = beta_moment_1(mu, sigma2);
            let b2 = beta_moment_2([mu, mu], [[sigma2, sigma2], [sigma2, sigma2]]);
            let b2x = beta_moment_2([mu, mu], [[sigma2, cov], [cov, sigma2]]);
            let var_cf = psbp_process_variance(g0b, b1, b2, Some(l))?;
            let cov_cf = psbp_process_covariance(g0b, (b1, b1), b2x, Some(l))?;
            let (rv, rc) = ((var / var_cf - 1.0).abs(), (cv / cov_cf - 1.0).abs());
            worst = worst.max(rv).max(rc);
            parts.push(format!("mu {mu} s2 {sigma2}: var {:.2}% cov {:.2}%", 100.0 * rv, 100.0 * rc));
        }
    }
    outcome(worst < 0.05, format!("relative error {} (tol 5%)", parts.join("; ")))
}

fn path_data(m: usize, t_len: usize, seed: u64) -> spfactor::Result<ObservationSet> {
    let edges: Vec<(usize, usize)> = (1..m).map(|i| (i - 1, i)).collect();
    let spatial = SpatialStructure::from_edges(m, &edges)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<Vec<Vec<f64>>> =
        (0..t_len).map(|_| vec![(0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()]).collect();
    ObservationSet::from_tensor(&y, (0..t_len).map(|t| t as f64 / t_len as f64).collect(), spatial)
}

fn within_3se(x: &[f64], target: f64) -> spfactor::Result<(bool, f64)> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let se = batch_means_se(x, 50)?;
    let z = (m - target) / se;
    Ok((z.abs() < 3.0, z))
}

/// 4. Conjugate σ² posterior, and prior recovery with every observation missing.
fn conjugate_updates() -> spfactor::Result<Outcome> {
    // σ² | y with the loadings held at zero is IG(a + T/2, b + Σy²/2).
    let data = path_data(3, 8, 40)?;
    let mut spec = ModelSpec { k: 2, ..ModelSpec::default() };
    spec.hyper.sigma_shape = 3.0;
    spec.hyper.sigma_scale = 2.0;
    let mut s = Sampler::new(&spec, &data, 41, 0)?;
    s.state.lambda.fill(0.0);
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| s.update_sigma2().map(|_| s.state.sigma2[0]))
        .collect::<spfactor::Result<_>>()?;
    let ss: f64 = (0..data.n_times()).map(|t| data.y[(0, t)].powi(2)).sum();
    let (a, b) = (3.0 + 0.5 * data.n_times() as f64, 2.0 + 0.5 * ss);
    let mean = b / (a - 1.0);
    let var = b * b / ((a - 1.0).powi(2) * (a - 2.0));
    let m4 = {
        // fourth central moment of IG(a, b)
        let e = |k: i32| (1..=k).fold(b.powi(k), |acc, i| acc / (a - i as f64));
        e(4) - 4.0 * mean * e(3) + 6.0 * mean * mean * e(2) - 3.0 * mean.powi(4)
    };
    let nf = n as f64;
    let sm = draws.iter().sum::<f64>() / nf;
    let sv = draws.iter().map(|x| (x - sm).powi(2)).sum::<f64>() / (nf - 1.0);
    let z_mean = (sm - mean) / (var / nf).sqrt();
    let z_var = (sv - var) / ((m4 - var * var) / nf).sqrt();
    let mut ok = z_mean.abs() < 3.0 && z_var.abs() < 3.0;
    let mut parts = vec![format!("sigma2 posterior z(mean) {z_mean:.2} z(var) {z_var:.2}")];

    // Prior recovery: no data, every update must leave the prior in place.
    let k = 2;
    let hyper = Hyper {
        kappa_df: Some(12.0),
        kappa_scale: 10.0,
        upsilon_df: Some(k as f64 + 4.0),
        upsilon_scale: 1.0,
        sigma_shape: 6.0,
        sigma_scale: 5.0,
        a1: 2.0,
        a2: 3.0,
        beta_variance: 2.0,
    };
    for variant in [ModelVariant::M1, ModelVariant::M5] {
        let base = ModelSpec { k, rho: ParamPrior::Uniform { lower: 0.0, upper: 0.9 }, hyper: hyper.clone(), ..ModelSpec::default() };
        let spec = variant.apply(&base);
        let mut data = path_data(5, 4, 42)?.with_intercept();
        data.missing.fill(true);
        let mut s = Sampler::new(&spec, &data, 43, 0)?;
        s.burn_in = 500;
        let mut tr: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for it in 0..20_500 {
            s.sweep()?;
            if it < 500 {
                continue;
            }
            let st = &s.state;
            tr.entry("sigma2").or_default().push(st.sigma2[0]);
            tr.entry("kappa").or_default().push(st.kappa[(0, 0)]);
            tr.entry("upsilon11").or_default().push(st.upsilon[(0, 0)]);
            tr.entry("eta^2/upsilon").or_default().push(st.eta[(1, 0)].powi(2) / st.upsilon[(0, 0)]);
            tr.entry("beta^2").or_default().push(st.beta[0].powi(2));
            tr.entry("delta1").or_default().push(st.mgp.delta[0]);
            match &st.stick {
                Some(stick) => {
                    let col = &stick.columns[0];
                    tr.entry("theta^2 delta").or_default().push(col.theta[0].powi(2) * st.mgp.delta[0]);
                    tr.entry("P(xi = 1)").or_default().push(f64::from(u8::from(col.xi[0] == 0)));
                    if let Some(z) = col.z.first() {
                        tr.entry("(z - alpha)^2").or_default().push((z[0] - col.alpha[0][0]).powi(2));
                    }
                }
                None => {
                    let v = st.lambda[(0, 0)].powi(2) * st.mgp.delta[0] / st.kappa[(0, 0)];
                    tr.entry("lambda^2 delta / kappa").or_default().push(v);
                }
            }
        }
        let delta1 = if variant == ModelVariant::M1 { 2.0 } else { 2.0 / 3.0 };
        let targets: BTreeMap<&str, f64> = [
            ("sigma2", 1.0),
            ("kappa", 1.0),
            ("upsilon11", 1.0 / 3.0),
            ("eta^2/upsilon", 1.0),
            ("beta^2", 2.0),
            ("delta1", delta1),
            ("theta^2 delta", 1.0),
            ("P(xi = 1)", 0.5),
            ("(z - alpha)^2", 1.0),
            ("lambda^2 delta / kappa", 1.0),
        ]
        .into_iter()
        .collect();
        let mut worst = ("", 0.0f64);
        for (name, x) in &tr {
            let (pass, z) = within_3se(x, targets[name])?;
            ok &= pass;
            if z.abs() > worst.1.abs() {
                worst = (name, z);
            }
        }
        parts.push(format!("{} prior recovery worst z {:.2} ({})", variant.name(), worst.1, worst.0));
    }
    outcome(ok, format!("{} (tol 3 SE)", parts.join(", ")))
}

/// 5. Simulation 1 ordering: WAIC(M1) < WAIC(M5) and CRPS(M1) < CRPS(M2).
fn sim1_ordering() -> spfactor::Result<Outcome> {
    let models = [ModelVariant::M1, ModelVariant::M2, ModelVariant::M5];
    let res = run_experiment(&Design::Sim1(Sim1Config::default()), &models, ExperimentSettings::default(), 2024)?;
    let s = |m| res.model_summary(m).expect("model was fitted");
    let (m1, m2, m5) = (s(ModelVariant::M1), s(ModelVariant::M2), s(ModelVariant::M5));
    outcome(
        m1.mean_waic < m5.mean_waic && m1.mean_crps < m2.mean_crps,
        format!(
            "mean WAIC M1 {:.1} vs M5 {:.1}; mean CRPS M1 {:.4} vs M2 {:.4} (10 replicates, 2000 iterations)",
            m1.mean_waic, m5.mean_waic, m1.mean_crps, m2.mean_crps
        ),
    )
}

/// 6. Simulation 2 clustering: median SS_PSBP ≥ 0.6 and median SS_Ratio > 1.
fn sim2_clustering() -> spfactor::Result<Outcome> {
    let cfg = Sim2Config { delta_beta0: 6.0, delta_beta1: 0.0, delta_sigma2: 0.0, rho: 0.99, ..Sim2Config::default() };
    let res = run_experiment(&Design::Sim2(cfg), &[ModelVariant::M1], ExperimentSettings::default(), 2025)?;
    let m1 = res.model_summary(ModelVariant::M1).expect("model was fitted");
    outcome(
        m1.median_ss_psbp >= 0.6 && m1.median_ss_ratio > 1.0,
        format!("M1 median SS_PSBP {:.3} (>= 0.6), median SS_Ratio {:.3} (> 1)", m1.median_ss_psbp, m1.median_ss_ratio),
    )
}

/// 7. AR(1) with unit spacing predicts `ψ η_T` one step ahead.
fn ar1_prediction() -> spfactor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let psi = rng.random_range(-0.95..0.95);
        let t_len = rng.random_range(2..=15);
        let k = rng.random_range(1..=3);
        let times: Vec<f64> = (0..t_len).map(|t| t as f64).collect();
        let eta = DMatrix::from_fn(t_len, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ups = DMatrix::identity(k, k);
        let (mean, _) = conditional_factor_moments(TemporalKernel::Ar1, psi, &eta, &ups, &times, &[t_len as f64])?;
        // generic H⁺ = H_no H_oo⁻¹ built directly from ψ^{|Δ|}
        let h = |a: f64, b: f64| psi.powi((a - b).abs().round() as i32);
        let h_oo = DMatrix::from_fn(t_len, t_len, |i, j| h(times[i], times[j]));
        let h_no = DMatrix::from_fn(1, t_len, |_, j| h(t_len as f64, times[j]));
        let h_plus = h_no * h_oo.lu().try_inverse().expect("AR(1) correlation is invertible");
        let generic = &h_plus * &eta;
        let (library_plus, _) = conditional_time_operators(TemporalKernel::Ar1, psi, &times, &[t_len as f64])?;
        for j in 0..k {
            let closed = psi * eta[(t_len - 1, j)];
            worst = worst.max((mean[j] - closed).abs()).max((generic[(0, j)] - closed).abs());
        }
        worst = worst.max((library_plus - h_plus).abs().max());
    }
    outcome(worst < 1e-10, format!("max deviation from psi * eta_T {worst:.1e} over 100 cases (tol 1e-10)"))
}

/// 8. WAIC and CRPS against brute force; Gaussian CRPS; Geweke under i.i.d. draws.
fn diagnostics_oracles() -> spfactor::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ll = DMatrix::from_fn(5, 4, |_, _| -rng.random_range(0.0..5.0));
        let (mut lppd, mut p) = (0.0, 0.0);
        for i in 0..5 {
            let row: Vec<f64> = ll.row(i).iter().copied().collect();
            lppd += (row.iter().map(|v| v.exp()).sum::<f64>() / 4.0).ln();
            let m = row.iter().sum::<f64>() / 4.0;
            p += row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0;
        }
        worst = worst.max((waic(&ll)? - (-2.0 * (lppd - p))).abs());
        let x: Vec<f64> = ll.iter().copied().collect();
        let y = rng.random_range(-5.0..0.0);
        let s = x.len() as f64;
        let brute = x.iter().map(|v| (v - y).abs()).sum::<f64>() / s
            - x.iter().flat_map(|a| x.iter().map(move |b| (a - b).abs())).sum::<f64>() / (2.0 * s * s);
        worst = worst.max((crps(&x, y)? - brute).abs());
    }
    let normal: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    let gauss = crps(&normal, 0.0)?;
    let expected = (2f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt();
    let mut small = 0;
    for _ in 0..1000 {
        let chain: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        if geweke_z(&chain, 0.1, 0.5)?.abs() < 3.0 {
            small += 1;
        }
    }
    outcome(
        worst < 1e-10 && (gauss - expected).abs() < 0.01 && small >= 990,
        format!(
            "brute-force max diff {worst:.1e} (tol 1e-10); Gaussian CRPS {gauss:.4} vs {expected:.4} (tol 0.01); Geweke |z| < 3 on {small}/1000 (need 990)"
        ),
    )
}

/// 9. Co-clustering ignores component labels; the k* thresholds are strict.
fn clustering_labels() -> spfactor::Result<Outcome> {
    let data = path_data(6, 5, 90)?;
    let spec = ModelSpec { k: 3, truncation: spfactor::psbp::Truncation::Finite(6), ..ModelSpec::default() };
    let draws = run_chain(&spec, &data, RunSettings { n_iter: 300, burn_in: 100, thin: 1, seed: 91 }, 0)?;
    let mut permuted = spfactor::draws::PosteriorDraws::new(draws.meta.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    for d in &draws.draws {
        let mut d = d.clone();
        for xi in &mut d.xi {
            let mut perm: Vec<usize> = (0..=xi.iter().copied().max().unwrap_or(0)).collect();
            perm.shuffle(&mut rng);
            for x in xi.iter_mut() {
                *x = perm[*x];
            }
        }
        permuted.draws.push(d);
    }
    let mut identical = true;
    for j in 0..spec.k {
        let (a, b) = (cocluster_probability(&draws, j)?, cocluster_probability(&permuted, j)?);
        identical &= a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    let g = |lo: f64, hi: f64| DMatrix::from_row_slice(3, 3, &[1.0, lo, hi, lo, 1.0, 0.5, hi, 0.5, 1.0]);
    let cases = [
        (vec![g(0.19, 0.81)], 1),
        (vec![g(0.2, 0.9)], 0),
        (vec![g(0.1, 0.8)], 0),
        (vec![g(0.0, 1.0), g(0.1, 0.9), g(0.5, 0.9)], 2),
        (vec![g(0.1, 0.9), g(0.3, 0.95), g(0.1, 0.9)], 1),
        (vec![g(0.5, 0.5), g(0.1, 0.9)], 0),
    ];
    let kstar_ok = cases.iter().all(|(gs, want)| select_kstar(gs) == *want);
    outcome(
        identical && kstar_ok,
        format!("permuted co-clustering bit-identical: {identical}; k* threshold cases correct: {kstar_ok}"),
    )
}

fn run_pipeline(dir: &Path) -> spfactor::Result<()> {
    let config = "\
seed = 31
output = \"out\"

[data]
observations = \"out/observations.csv\"
spatial = \"out/spatial.csv\"
times = \"out/times.csv\"
holdout = \"out/holdout.csv\"

[chain]
n_iter = 400
burn_in = 200
chains = 2

[predict]
new_times = [1.1111111111111112, 1.2222222222222223, 1.3333333333333333]
";
    fs::write(dir.join("run.toml"), config).map_err(spfactor::Error::from)?;
    for cmd in ["simulate", "fit", "predict", "cluster", "diagnose"] {
        let status = Command::new(env!("CARGO_BIN_EXE_spfactor"))
            .args([cmd, "--config", "run.toml"])
            .current_dir(dir)
            .status()
            .map_err(spfactor::Error::from)?;
        if !status.success() {
            return Err(spfactor::Error::InvariantViolation(format!("`spfactor {cmd}` exited with {status}")));
        }
    }
    Ok(())
}

fn dir_bytes(dir: &Path) -> spfactor::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(spfactor::Error::from)? {
        let entry = entry.map_err(spfactor::Error::from)?;
        let bytes = fs::read(entry.path()).map_err(spfactor::Error::from)?;
        out.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

/// 10. `simulate → fit → predict → cluster` twice gives byte-identical outputs.
fn end_to_end_determinism() -> spfactor::Result<Outcome> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let (fa, fb) = (dir_bytes(&a.path().join("out"))?, dir_bytes(&b.path().join("out"))?);
    let expected = ["draws.csv", "loglik.csv", "meta.json", "ppd.csv", "clusters.csv", "cluster.json", "manifest.json"];
    let present = expected.iter().all(|f| fa.contains_key(*f));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    outcome(
        present && differing.is_empty() && fa.len() == fb.len(),
        format!("{} files compared, all outputs present: {present}, differing: {differing:?}", fa.len()),
    )
}

type Criterion = (usize, &'static str, Duration, fn() -> spfactor::Result<Outcome>);

fn main() {
    let minute = Duration::from_secs(60);
    let criteria: [Criterion; 10] = [
        (1, "stick-weight normalization and slice invariants", minute, stick_normalization),
        (2, "Polya-Gamma sampler moments", minute, pg_moments),
        (3, "PSBP moment oracle", 2 * minute, psbp_moments),
        (4, "conjugate-update and prior-recovery oracles", 5 * minute, conjugate_updates),
        (5, "simulation 1 model ordering", 30 * minute, sim1_ordering),
        (6, "simulation 2 clustering", 30 * minute, sim2_clustering),
        (7, "AR(1) prediction identity", Duration::from_secs(1), ar1_prediction),
        (8, "diagnostics oracles", 2 * minute, diagnostics_oracles),
        (9, "clustering label-switching robustness", minute, clustering_labels),
        (10, "end-to-end determinism", 10 * minute, end_to_end_determinism),
    ];
    // `cargo test` passes harness flags; numeric arguments select criteria.
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed < limit;
        let (pass, detail) = match result {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {detail}; runtime {:.1}s (limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        if std::env::var_os("SPFACTOR_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
