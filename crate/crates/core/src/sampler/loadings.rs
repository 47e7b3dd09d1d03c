//! Loadings block: stick-breaking slice/finite updates and Gaussian loadings.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Sampler, MAX_STICKS};
use crate::dist::{norm_cdf, normal_negative, normal_positive, uniform_open};
use crate::error::Result;
use crate::linalg::{self, sample_with_precision_factor};
use crate::psbp::{StickColumn, Truncation};

/// Per-cell sufficient statistics `(A, B)` of one loading column: the column's
/// contribution to the log-likelihood is `λ(c)B(c) − ½λ(c)²A(c)`.
pub(crate) fn column_statistics(
    prec: &DMatrix<f64>,
    lin: &DMatrix<f64>,
    offset: &DMatrix<f64>,
    eta_j: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let cells = prec.nrows();
    let mut a = vec![0.0; cells];
    let mut b = vec![0.0; cells];
    for (t, &e) in eta_j.iter().enumerate() {
        if e == 0.0 {
            continue;
        }
        for c in 0..cells {
            let p = prec[(c, t)];
            a[c] += p * e * e;
            b[c] += e * (lin[(c, t)] - p * offset[(c, t)]);
        }
    }
    (a, b)
}

fn prior_stick<R: Rng + ?Sized>(
    prior_chol: &Cholesky<f64, Dyn>,
    cells: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let alpha = sample_with_precision_factor(prior_chol, &DVector::zeros(cells), rng);
    let z = alpha.iter().map(|a| a + rng.sample::<f64, _>(StandardNormal)).collect();
    (alpha.iter().copied().collect(), z)
}

/// Sample index from unnormalized log weights.
fn sample_log_weights<R: Rng + ?Sized>(candidates: &[(usize, f64)], rng: &mut R) -> usize {
    let max = candidates.iter().fold(f64::NEG_INFINITY, |m, &(_, w)| m.max(w));
    let total: f64 = candidates.iter().map(|&(_, w)| (w - max).exp()).sum();
    let mut target = rng.random::<f64>() * total;
    for &(l, w) in candidates {
        target -= (w - max).exp();
        if target <= 0.0 {
            return l;
        }
    }
    candidates.last().expect("at least one candidate").0
}

impl Sampler {
    /// Updates every loading column given the factors.
    pub fn update_loadings_block(&mut self) -> Result<()> {
        let wk = self.working_kernel();
        let mut pred = self.predictor();
        let tau = self.tau();
        let prior_prec = self.prior_precision()?;
        let k = self.k();
        if self.state.stick.is_some() {
            let prior_chol = linalg::cholesky(&prior_prec, "stick prior precision")?;
            let mut post = prior_prec.clone();
            for i in 0..post.nrows() {
                post[(i, i)] += 1.0;
            }
            let post_chol = linalg::cholesky(&post, "stick posterior precision")?;
            let trunc = self.spec.truncation;
            for j in 0..k {
                let eta_j: Vec<f64> = self.state.eta.column(j).iter().copied().collect();
                let old = self.state.lambda.column(j).into_owned();
                let offset = &pred - &old * DMatrix::from_row_slice(1, eta_j.len(), &eta_j);
                let (a, b) = column_statistics(&wk.prec, &wk.lin, &offset, &eta_j);
                let mut col = self.state.stick.as_mut().expect("stick state").columns[j].clone();
                update_stick_column(&mut col, trunc, &a, &b, tau[j], &prior_chol, &post_chol, &mut self.rng);
                let new = DVector::from_iterator(col.n_cells(), col.xi.iter().map(|&x| col.theta[x]));
                self.state.stick.as_mut().expect("stick state").columns[j] = col;
                pred = offset + &new * DMatrix::from_row_slice(1, eta_j.len(), &eta_j);
                self.state.lambda.set_column(j, &new);
            }
        } else {
            for j in 0..k {
                let eta_j: Vec<f64> = self.state.eta.column(j).iter().copied().collect();
                let old = self.state.lambda.column(j).into_owned();
                let offset = &pred - &old * DMatrix::from_row_slice(1, eta_j.len(), &eta_j);
                let (a, b) = column_statistics(&wk.prec, &wk.lin, &offset, &eta_j);
                let mut q = &prior_prec * tau[j];
                for (i, ai) in a.iter().enumerate() {
                    q[(i, i)] += ai;
                }
                let new = linalg::sample_mvn_precision(&q, &DVector::from_vec(b), &mut self.rng, "loading precision")?;
                pred = offset + &new * DMatrix::from_row_slice(1, eta_j.len(), &eta_j);
                self.state.lambda.set_column(j, &new);
            }
        }
        Ok(())
    }
}

/// One stick-breaking update of a loading column: slice variables and stick
/// extension (slice mode), collapsed indicators, latent probits, sticks, then
/// atoms.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_stick_column<R: Rng + ?Sized>(
    col: &mut StickColumn,
    trunc: Truncation,
    a: &[f64],
    b: &[f64],
    tau_j: f64,
    prior_chol: &Cholesky<f64, Dyn>,
    post_chol: &Cholesky<f64, Dyn>,
    rng: &mut R,
) {
    let cells = col.n_cells();
    let sd = 1.0 / tau_j.sqrt();

    // Slice variables and stick extension
    let mut u = Vec::new();
    if trunc == Truncation::Slice {
        u = (0..cells).map(|c| col.cell_weights(c, trunc)[col.xi[c]] * uniform_open(rng)).collect();
        // residual mass per cell after the instantiated sticks
        let mut residual: Vec<f64> = (0..cells).map(|c| col.cell_residual(c, trunc)).collect();
        while residual.iter().zip(&u).any(|(r, u)| r >= u) {
            if col.n_sticks() >= MAX_STICKS {
                warn!("slice sampler reached the cap of {MAX_STICKS} sticks");
                break;
            }
            let (alpha, z) = prior_stick(prior_chol, cells, rng);
            for c in 0..cells {
                residual[c] *= norm_cdf(-alpha[c]);
            }
            col.alpha.push(alpha);
            col.z.push(z);
            col.theta.push(sd * rng.sample::<f64, _>(StandardNormal));
        }
        // smallest prefix that covers every cell's slice
        let mut needed = 1;
        for c in 0..cells {
            let mut rem = 1.0;
            let mut l = 0;
            while l < col.n_sticks() && rem >= u[c] {
                rem *= norm_cdf(-col.alpha[l][c]);
                l += 1;
            }
            needed = needed.max(l.max(col.xi[c] + 1));
        }
        col.alpha.truncate(needed);
        col.z.truncate(needed);
        col.theta.truncate(needed);
    }

    // Indicators, one cell at a time with the atoms integrated out
    let n_atoms = col.n_atoms();
    let mut prec = vec![tau_j; n_atoms];
    let mut lin = vec![0.0; n_atoms];
    for c in 0..cells {
        prec[col.xi[c]] += a[c];
        lin[col.xi[c]] += b[c];
    }
    let mut cand = Vec::with_capacity(n_atoms);
    for c in 0..cells {
        let old = col.xi[c];
        prec[old] -= a[c];
        lin[old] -= b[c];
        let w = col.cell_weights(c, trunc);
        cand.clear();
        for (l, &wl) in w.iter().enumerate() {
            let prior = match trunc {
                Truncation::Slice if wl > u[c] => 0.0,
                Truncation::Finite(_) if wl > 0.0 => wl.ln(),
                _ => continue,
            };
            let (p, q) = (prec[l], lin[l]);
            let joined = p + a[c];
            let log_marginal = 0.5 * (p / joined).ln() + 0.5 * (q + b[c]).powi(2) / joined - 0.5 * q * q / p;
            cand.push((l, prior + log_marginal));
        }
        let new = if cand.is_empty() { old } else { sample_log_weights(&cand, rng) };
        col.xi[c] = new;
        prec[new] += a[c];
        lin[new] += b[c];
    }

    // Latent probits
    for l in 0..col.n_sticks() {
        for c in 0..cells {
            let mu = col.alpha[l][c];
            col.z[l][c] = match l.cmp(&col.xi[c]) {
                std::cmp::Ordering::Less => normal_negative(mu, rng),
                std::cmp::Ordering::Equal => normal_positive(mu, rng),
                std::cmp::Ordering::Greater => mu + rng.sample::<f64, _>(StandardNormal),
            };
        }
    }

    // Sticks
    for l in 0..col.n_sticks() {
        let zl = DVector::from_column_slice(&col.z[l]);
        let alpha = sample_with_precision_factor(post_chol, &zl, rng);
        col.alpha[l] = alpha.iter().copied().collect();
    }

    // Atoms
    prec.fill(tau_j);
    lin.fill(0.0);
    for c in 0..cells {
        prec[col.xi[c]] += a[c];
        lin[col.xi[c]] += b[c];
    }
    for l in 0..n_atoms {
        let v = 1.0 / prec[l];
        col.theta[l] = lin[l] * v + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
    }

    if trunc == Truncation::Slice {
        // Sticks and atoms past the largest occupied component are prior
        // draws given the indicators. Dropping them keeps the retained set
        // independent of the stick values, which the κ and ρ updates rely on.
        let keep = col.xi.iter().copied().max().map_or(1, |x| x + 1);
        col.alpha.truncate(keep);
        col.z.truncate(keep);
        col.theta.truncate(keep);
        col.u = (0..cells)
            .map(|c| col.cell_weights(c, trunc)[col.xi[c]] * uniform_open(rng))
            .collect();
    }
}
