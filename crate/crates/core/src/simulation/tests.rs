use super::*;

#[test]
fn sim1_dimensions_and_prefix() {
    let cfg = Sim1Config::default();
    let sticks = sim1_sticks(&cfg, &mut derived_rng(1, 0)).unwrap();
    assert_eq!(sticks.alpha.len(), 3);
    assert_eq!(sticks.alpha[0].len(), SIM1_TRUE_COMPONENTS - 1);
    let d = generate_sim1(&cfg, &sticks, &mut derived_rng(1, 1)).unwrap();
    assert_eq!(d.full.y.shape(), (52, 13));
    assert_eq!(d.fit.y.shape(), (52, 10));
    assert_eq!(d.fit.y, d.full.y.columns(0, 10).into_owned());
    assert_eq!(d.truth.eta.shape(), (13, 3));
    d.fit.validate(crate::likelihood::Family::Gaussian).unwrap();
    let t = d.fit.times.as_slice();
    assert_eq!(t[0], 0.0);
    assert!((t[9] - 1.0).abs() < 1e-15);
    for (j, labels) in d.truth.xi.iter().enumerate() {
        for (c, &l) in labels.iter().enumerate() {
            assert_eq!(d.truth.lambda[(c, j)], d.truth.theta[j][l]);
        }
    }
}

#[test]
fn sim1_is_deterministic() {
    let cfg = Sim1Config::default();
    let gen = || {
        let sticks = sim1_sticks(&cfg, &mut derived_rng(7, 0)).unwrap();
        generate_sim1(&cfg, &sticks, &mut derived_rng(7, 1)).unwrap()
    };
    assert_eq!(gen(), gen());
}

#[test]
fn sim1_spatial_sticks_are_smoother_than_iid() {
    // Mean squared difference across lattice edges relative to the field variance.
    let roughness = |spatial: bool| {
        let cfg = Sim1Config { spatial, k_true: 6, ..Sim1Config::default() };
        let sticks = sim1_sticks(&cfg, &mut derived_rng(3, 0)).unwrap();
        let edges = lattice::edges();
        let (mut num, mut den) = (0.0, 0.0);
        for col in &sticks.alpha {
            for a in col {
                let mu = a.mean();
                den += a.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / a.len() as f64;
                num += edges.iter().map(|&(i, j)| (a[i] - a[j]).powi(2)).sum::<f64>() / edges.len() as f64;
            }
        }
        num / den
    };
    let iid = roughness(false);
    assert!((iid - 2.0).abs() < 0.3, "iid ratio {iid}");
    let sp = roughness(true);
    assert!(sp < 0.75 * iid, "spatial ratio {sp} vs iid {iid}");
}

#[test]
fn sim2_labels_and_means() {
    let cfg = Sim2Config::default();
    let d = generate_sim2(&cfg, &mut derived_rng(5, 0)).unwrap();
    assert_eq!(d.labels.len(), 52);
    assert_eq!(d.labels.iter().filter(|&&l| l == 1).count(), 8);
    assert_eq!(d.data.y.shape(), (52, 10));
    assert_eq!(d.data.n_covariates(), 0);
}

#[test]
fn sim2_offset_shifts_cluster_intercept() {
    // Average over many fields: cluster 1 intercept mean ≈ −2, cluster 2 ≈ −8.
    let cfg = Sim2Config::default();
    let (mut a, mut b) = (0.0, 0.0);
    let reps = 400;
    for r in 0..reps {
        let d = generate_sim2(&cfg, &mut derived_rng(11, r)).unwrap();
        let (mut s1, mut s2) = (0.0, 0.0);
        for (c, &l) in d.labels.iter().enumerate() {
            if l == 1 {
                s1 += d.beta0[c] / 8.0;
            } else {
                s2 += d.beta0[c] / 44.0;
            }
        }
        a += s1 / reps as f64;
        b += s2 / reps as f64;
    }
    assert!((a + 2.0).abs() < 0.3, "cluster 1 intercept {a}");
    assert!((b + 8.0).abs() < 0.3, "cluster 2 intercept {b}");
}

#[test]
fn sim2_rho_zero_gives_independent_field() {
    // With ρ = 0 the precision is D, so neighbouring intercepts are uncorrelated.
    let cfg = Sim2Config { rho: 0.0, delta_beta0: 0.0, ..Sim2Config::default() };
    let edges = lattice::edges();
    let deg = lattice::spatial_structure().degrees().unwrap();
    let reps = 2000;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in 0..reps {
        let d = generate_sim2(&cfg, &mut derived_rng(13, r)).unwrap();
        for &(i, j) in &edges {
            let (x, y) = ((d.beta0[i] + 8.0) * deg[i].sqrt(), (d.beta0[j] + 8.0) * deg[j].sqrt());
            sxy += x * y;
            sxx += 0.5 * (x * x + y * y);
        }
    }
    let corr = sxy / sxx;
    assert!(corr.abs() < 0.02, "neighbour correlation {corr}");
    // Standardised variance is κ₁₁ = 4.
    let var = sxx / (reps as f64 * edges.len() as f64);
    assert!((var - 4.0).abs() < 0.2, "variance {var}");
}

#[test]
fn experiment_runs_at_tiny_scale() {
    let settings = ExperimentSettings { n_iter: 30, burn_in: 10, thin: 2, k: 2 };
    let design = Design::Sim1(Sim1Config { replicates: 2, k_true: 1, ..Sim1Config::default() });
    let res = run_experiment(&design, &[ModelVariant::M1, ModelVariant::M5], settings, 9).unwrap();
    assert_eq!(res.rows.len(), 4);
    assert!(res.rows.iter().all(|r| r.waic.is_finite() && r.crps.is_finite() && r.crps >= 0.0));
    let again = run_experiment(&design, &[ModelVariant::M1, ModelVariant::M5], settings, 9).unwrap();
    let csv = |r: &ExperimentResults| {
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        out
    };
    assert_eq!(csv(&res), csv(&again));
    let mut text = Vec::new();
    res.write_text(&mut text).unwrap();
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 3);

    let design = Design::Sim2(Sim2Config { replicates: 1, ..Sim2Config::default() });
    let res = run_experiment(&design, &[ModelVariant::M1], settings, 9).unwrap();
    let row = res.rows[0];
    assert!((0.0..=1.0).contains(&row.ss_psbp));
    assert!(row.ss_raw > 0.0 && row.ss_raw <= 1.0);
    assert!(String::from_utf8(csv(&res)).unwrap().starts_with("replicate,model,waic"));
}
