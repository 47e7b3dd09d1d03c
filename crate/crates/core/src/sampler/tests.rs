use super::loadings::update_stick_column;
use super::*;
use crate::kernels::TemporalKernel;
use crate::model::ParamPrior;
use approx::assert_abs_diff_eq;

fn path_data(m: usize, t_len: usize, seed: u64) -> ObservationSet {
    let edges: Vec<(usize, usize)> = (1..m).map(|i| (i - 1, i)).collect();
    let spatial = SpatialStructure::from_edges(m, &edges).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<Vec<Vec<f64>>> =
        (0..t_len).map(|_| vec![(0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()]).collect();
    ObservationSet::from_tensor(&y, (0..t_len).map(|t| t as f64).collect(), spatial).unwrap()
}

fn small_spec() -> ModelSpec {
    ModelSpec { k: 2, ..ModelSpec::default() }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[test]
fn same_seed_gives_identical_states() {
    let data = path_data(5, 4, 1);
    let spec = small_spec();
    let mut a = Sampler::new(&spec, &data, 7, 0).unwrap();
    let mut b = Sampler::new(&spec, &data, 7, 0).unwrap();
    assert_eq!(a.state, b.state);
    for _ in 0..2 {
        a.sweep().unwrap();
        b.sweep().unwrap();
    }
    assert_eq!(a.state, b.state);
    let c = Sampler::new(&spec, &data, 7, 1).unwrap();
    assert_ne!(a.state.eta, c.state.eta);
}

#[test]
fn gaussian_iid_has_no_sticks() {
    let data = path_data(5, 3, 2);
    let spec = crate::model::ModelVariant::M5.apply(&small_spec());
    let mut s = Sampler::new(&spec, &data, 1, 0).unwrap();
    assert!(s.state.stick.is_none());
    s.sweep().unwrap();
    assert!(s.state.stick.is_none());
    assert!(s.draw(0).theta.is_empty());
}

#[test]
fn single_atom_mixture_is_degenerate() {
    let data = path_data(5, 3, 3);
    let spec = ModelSpec { k: 1, truncation: Truncation::Finite(1), ..ModelSpec::default() };
    let mut s = Sampler::new(&spec, &data, 1, 0).unwrap();
    for _ in 0..3 {
        s.sweep().unwrap();
        let st = s.state.stick.as_ref().unwrap();
        assert!(st.columns[0].xi.iter().all(|&x| x == 0));
        assert_eq!(st.columns[0].n_sticks(), 0);
        assert_eq!(st.columns[0].cell_weights(2, st.truncation), vec![1.0]);
    }
}

#[test]
fn invariants_hold_across_slice_sweeps() {
    let data = path_data(6, 4, 4);
    let mut s = Sampler::new(&small_spec(), &data, 3, 0).unwrap();
    s.check_invariants().unwrap();
    for _ in 0..100 {
        s.sweep().unwrap();
        s.check_invariants().unwrap();
        let st = s.state.stick.as_ref().unwrap();
        for col in &st.columns {
            for c in 0..col.n_cells() {
                let total: f64 = col.cell_weights(c, Truncation::Slice).iter().sum::<f64>()
                    + col.cell_residual(c, Truncation::Slice);
                assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn run_chain_bookkeeping() {
    let data = path_data(4, 3, 5);
    // fixed ψ: no adaptation, so burn-in length does not alter the stream
    let spec = ModelSpec { psi: ParamPrior::Fixed(0.5), ..small_spec() };
    let settings = RunSettings { n_iter: 10, burn_in: 0, thin: 1, seed: 1 };
    let out = run_chain(&spec, &data, settings, 0).unwrap();
    assert_eq!(out.len(), 10);
    assert_eq!(out.loglik.cols(), 10);
    assert_eq!(out.loglik.rows(), 12);
    let thinned = run_chain(&spec, &data, RunSettings { n_iter: 10, burn_in: 4, thin: 2, seed: 1 }, 0).unwrap();
    let iters: Vec<usize> = thinned.draws.iter().map(|d| d.iteration).collect();
    assert_eq!(iters, vec![6, 8, 10]);
    // same stream: the thinned draws coincide with the unthinned run
    assert_eq!(thinned.draws[0].eta, out.draws[5].eta);
    assert!(RunSettings { n_iter: 3, burn_in: 3, thin: 1, seed: 0 }.validate().is_err());
    assert!(RunSettings { n_iter: 4, burn_in: 3, thin: 0, seed: 0 }.validate().is_err());
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let data = path_data(4, 3, 6);
    let spec = ModelSpec { psi: ParamPrior::Auto, ..small_spec() };
    let full = run_chain(&spec, &data, RunSettings { n_iter: 12, burn_in: 6, thin: 1, seed: 9 }, 0).unwrap();

    let mut s = Sampler::new(&spec, &data, 9, 0).unwrap();
    s.burn_in = 6;
    for _ in 0..5 {
        s.sweep().unwrap();
    }
    let mut buf = Vec::new();
    s.checkpoint().write(&mut buf).unwrap();
    assert!(buf.starts_with(b"spfactor-checkpoint 1\n"));
    let cp = Checkpoint::read(&buf[..]).unwrap();
    let mut resumed = Sampler::resume(&spec, &data, cp).unwrap();
    let rest = continue_chain(&mut resumed, RunSettings { n_iter: 12, burn_in: 6, thin: 1, seed: 9 }, 0).unwrap();
    assert_eq!(rest.draws, full.draws);

    let bad = b"spfactor-checkpoint 99\n{}".to_vec();
    assert!(matches!(Checkpoint::read(&bad[..]), Err(Error::Format(_))));
}

#[test]
fn factor_conditional_scalar_conjugate() {
    // AR(1) with ψ = 0 makes H = I, so each η_t is an independent scalar problem
    let m = 5;
    let data = path_data(m, 2, 7);
    let spec = ModelSpec {
        k: 1,
        truncation: Truncation::Finite(1),
        temporal_kernel: TemporalKernel::Ar1,
        psi: ParamPrior::Fixed(0.0),
        ..ModelSpec::default()
    };
    let mut s = Sampler::new(&spec, &data, 11, 0).unwrap();
    s.state.lambda = DMatrix::from_element(m, 1, 1.0);
    s.state.sigma2.fill(1.0);
    s.state.upsilon = DMatrix::identity(1, 1);
    let n = 10_000;
    let mut draws = vec![Vec::with_capacity(n); 2];
    for _ in 0..n {
        s.update_factors().unwrap();
        draws[0].push(s.state.eta[(0, 0)]);
        draws[1].push(s.state.eta[(1, 0)]);
    }
    for t in 0..2 {
        let sum_y: f64 = data.y.column(t).sum();
        let post_mean = sum_y / (m as f64 + 1.0);
        let post_var = 1.0 / (m as f64 + 1.0);
        let se = (post_var / n as f64).sqrt();
        assert!((mean(&draws[t]) - post_mean).abs() < 3.0 * se, "t={t}");
        let v = draws[t].iter().map(|x| (x - mean(&draws[t])).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - post_var).abs() < 0.05 * post_var);
    }
}

#[test]
fn regression_intercept_tracks_grand_mean() {
    let data = path_data(6, 3, 8).with_intercept();
    let spec = small_spec();
    let mut s = Sampler::new(&spec, &data, 2, 0).unwrap();
    s.state.lambda.fill(0.0);
    s.state.sigma2.fill(1.0);
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            s.update_regression().unwrap();
            s.state.beta[0]
        })
        .collect();
    let count = data.y.len() as f64;
    let prec = count + 1.0 / 1000.0;
    let post_mean = data.y.sum() / prec;
    let se = (1.0 / prec / n as f64).sqrt();
    assert!((mean(&draws) - post_mean).abs() < 3.0 * se);
}

#[test]
fn regression_orthogonal_design_has_diagonal_posterior() {
    let mut data = path_data(4, 2, 9);
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
    data.covariates = vec![x.clone(), x];
    let mut s = Sampler::new(&small_spec(), &data, 1, 0).unwrap();
    s.state.sigma2.fill(0.7);
    let (prec, _) = s.regression_system();
    let cov = prec.try_inverse().unwrap();
    assert!(cov[(0, 1)].abs() < 1e-8);
    assert!(cov[(0, 0)] > 0.0 && cov[(1, 1)] > 0.0);
}

#[test]
fn sigma2_zero_residual_is_inverse_gamma() {
    // zero residuals, T = 10, a = b = 1 gives IG(6, 1)
    let data = {
        let mut d = path_data(3, 10, 10);
        d.y.fill(0.0);
        d
    };
    let mut spec = small_spec();
    spec.hyper.sigma_shape = 1.0;
    spec.hyper.sigma_scale = 1.0;
    let mut s = Sampler::new(&spec, &data, 4, 0).unwrap();
    s.state.lambda.fill(0.0);
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            s.update_sigma2().unwrap();
            s.state.sigma2[1]
        })
        .collect();
    let (a, b) = (6.0, 1.0);
    let m = b / (a - 1.0);
    let v = b * b / ((a - 1.0) * (a - 1.0) * (a - 2.0));
    assert!((mean(&draws) - m).abs() < 3.0 * (v / n as f64).sqrt());
}

#[test]
fn symmetric_two_component_indicator() {
    // α = 0 gives weights (0.5, 0.5); zero likelihood information keeps them
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prior = cholesky(&DMatrix::identity(1, 1), "p").unwrap();
    let post = cholesky(&(DMatrix::identity(1, 1) * 2.0), "q").unwrap();
    let n = 10_000;
    let mut hits = 0usize;
    for _ in 0..n {
        let mut col =
            StickColumn { alpha: vec![vec![0.0]], z: vec![vec![1.0]], theta: vec![0.3, -0.8], xi: vec![0], u: vec![] };
        update_stick_column(&mut col, Truncation::Finite(2), &[0.0], &[0.0], 1.0, &prior, &post, &mut rng);
        hits += (col.xi[0] == 0) as usize;
    }
    let p = hits as f64 / n as f64;
    assert!((p - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
}

#[test]
fn empty_component_atom_is_prior_draw() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let prior = cholesky(&DMatrix::identity(2, 2), "p").unwrap();
    let post = cholesky(&(DMatrix::identity(2, 2) * 2.0), "q").unwrap();
    let tau = 4.0;
    let n = 10_000;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        // a very negative α keeps both cells on atom 0, so atom 1 is empty
        let mut col = StickColumn {
            alpha: vec![vec![8.0, 8.0]],
            z: vec![vec![1.0, 1.0]],
            theta: vec![0.0, 0.0],
            xi: vec![0, 0],
            u: vec![],
        };
        update_stick_column(&mut col, Truncation::Finite(2), &[5.0, 5.0], &[1.0, 1.0], tau, &prior, &post, &mut rng);
        assert!(col.xi.iter().all(|&x| x == 0));
        draws.push(col.theta[1]);
    }
    let m = mean(&draws);
    let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(m.abs() < 3.0 * (1.0 / tau / n as f64).sqrt());
    assert!((v - 1.0 / tau).abs() < 0.05 / tau);
}

#[test]
fn fixed_rho_is_untouched() {
    let data = path_data(4, 3, 11);
    let mut s = Sampler::new(&small_spec(), &data, 1, 0).unwrap();
    for _ in 0..5 {
        s.sweep().unwrap();
        assert_eq!(s.state.rho, 0.99);
    }
    assert_eq!(s.state.tuning.rho.proposed, 0);
}

#[test]
fn polya_gamma_step_moments() {
    let mut data = path_data(2, 2, 12);
    data.y = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    data.trials = Some(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]));
    let spec = ModelSpec { likelihood: crate::likelihood::LikelihoodSpec::new(Family::Binomial), ..small_spec() };
    let mut s = Sampler::new(&spec, &data, 3, 0).unwrap();
    s.state.lambda.fill(0.0);
    let n = 10_000;
    let mut omega = Vec::with_capacity(n);
    for _ in 0..n {
        s.update_polya_gamma().unwrap();
        let w = s.state.omega.as_ref().unwrap();
        assert_eq!(w[(1, 1)], 0.0);
        omega.push(w[(0, 0)]);
    }
    // PG(1, 0): mean 1/4, variance 1/24
    assert!((mean(&omega) - 0.25).abs() < 3.0 * (1.0 / 24.0 / n as f64).sqrt());
}

#[test]
fn adaptation_reaches_target_band() {
    let mut data = path_data(4, 6, 13);
    data.missing.fill(true);
    let spec = ModelSpec { k: 1, truncation: Truncation::Finite(2), ..ModelSpec::default() };
    let mut s = Sampler::new(&spec, &data, 5, 0).unwrap();
    s.burn_in = 2000;
    for _ in 0..4000 {
        s.sweep().unwrap();
    }
    let rate = s.state.tuning.psi.rate().unwrap();
    assert!((0.2..=0.6).contains(&rate), "acceptance {rate}");
}

#[test]
fn chains_merge_in_order() {
    let data = path_data(4, 3, 14);
    let settings = RunSettings { n_iter: 4, burn_in: 1, thin: 1, seed: 3 };
    let merged = run_chains(&small_spec(), &data, settings, 2).unwrap();
    let chains: Vec<usize> = merged.draws.iter().map(|d| d.chain).collect();
    assert_eq!(chains, vec![0, 0, 0, 1, 1, 1]);
    assert_eq!(merged.loglik.cols(), 6);
    let single = run_chain(&small_spec(), &data, settings, 1).unwrap();
    assert_eq!(&merged.draws[3..], &single.draws[..]);
    assert_abs_diff_eq!(merged.acceptance.len() as f64, 2.0);
}
