//! Model fit and convergence metrics: WAIC, CRPS and the Geweke statistic.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::draws::LogLikStore;
use crate::error::{Error, Result};

/// Per-cell streaming accumulator for WAIC: log-sum-exp of the
/// log-likelihood plus Welford moments, one column (draw) at a time.
#[derive(Clone, Debug)]
pub struct WaicAccumulator {
    max: Vec<f64>,
    sum_exp: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    n: usize,
}

impl WaicAccumulator {
    pub fn new(cells: usize) -> Self {
        WaicAccumulator {
            max: vec![f64::NEG_INFINITY; cells],
            sum_exp: vec![0.0; cells],
            mean: vec![0.0; cells],
            m2: vec![0.0; cells],
            n: 0,
        }
    }

    pub fn push(&mut self, column: &[f64]) -> Result<()> {
        if column.len() != self.max.len() {
            return Err(Error::DimensionMismatch(format!(
                "log-likelihood column has {} entries, expected {}",
                column.len(),
                self.max.len()
            )));
        }
        self.n += 1;
        let n = self.n as f64;
        for (i, &v) in column.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!("non-finite log-likelihood in cell {i}")));
            }
            if v > self.max[i] {
                self.sum_exp[i] = self.sum_exp[i] * (self.max[i] - v).exp() + 1.0;
                self.max[i] = v;
            } else {
                self.sum_exp[i] += (v - self.max[i]).exp();
            }
            let d = v - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (v - self.mean[i]);
        }
        Ok(())
    }

    /// `(lppd, p_waic)`.
    pub fn components(&self) -> Result<(f64, f64)> {
        if self.n < 2 {
            return Err(Error::DegenerateDraws(self.n));
        }
        let n = self.n as f64;
        let mut lppd = 0.0;
        let mut p = 0.0;
        for i in 0..self.max.len() {
            lppd += self.max[i] + (self.sum_exp[i] / n).ln();
            p += self.m2[i] / (n - 1.0);
        }
        Ok((lppd, p))
    }

    pub fn waic(&self) -> Result<f64> {
        let (lppd, p) = self.components()?;
        Ok(-2.0 * (lppd - p))
    }
}

/// WAIC of a `cells × draws` log-likelihood matrix; smaller is better.
pub fn waic(ll: &DMatrix<f64>) -> Result<f64> {
    let mut acc = WaicAccumulator::new(ll.nrows());
    for col in ll.column_iter() {
        acc.push(col.as_slice())?;
    }
    acc.waic()
}

/// WAIC streamed from a (possibly disk-backed) log-likelihood store.
pub fn waic_store(store: &LogLikStore) -> Result<f64> {
    let mut acc = WaicAccumulator::new(store.rows());
    let mut err = None;
    store.for_each_column(|col| {
        if err.is_none() {
            if let Err(e) = acc.push(col) {
                err = Some(e);
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    acc.waic()
}

/// Empirical CRPS: `mean|X − y| − ½ mean|X − X'|` over all ordered pairs.
pub fn crps(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::DegenerateDraws(0));
    }
    let s = samples.len() as f64;
    let abs_dev = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σ_{i,j}|x_i − x_j| = 2 Σ_i (2i − S + 1) x_(i), zero-based i
    let pair_sum: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - s + 1.0) * x).sum::<f64>() * 2.0;
    Ok((abs_dev - 0.5 * pair_sum / (s * s)).max(0.0))
}

/// Spectral density at frequency zero with a Bartlett window of `4%` of the length.
pub fn spectral_variance_at_zero(x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let lag = ((0.04 * n as f64).floor() as usize).max(1).min(n.saturating_sub(1));
    let autocov = |h: usize| -> f64 {
        (0..n - h).map(|i| (x[i] - mean) * (x[i + h] - mean)).sum::<f64>() / n as f64
    };
    let mut s = autocov(0);
    for h in 1..=lag {
        s += 2.0 * (1.0 - h as f64 / (lag as f64 + 1.0)) * autocov(h);
    }
    s.max(0.0)
}

/// Geweke convergence z-score comparing the first `frac_a` and last `frac_b` of a chain.
pub fn geweke_z(chain: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    if chain.len() < 20 {
        return Err(Error::PreconditionViolation(format!("chain length {} < 20", chain.len())));
    }
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::InvalidParameter(format!("segment fractions ({frac_a}, {frac_b})")));
    }
    let n = chain.len();
    let na = ((frac_a * n as f64).floor() as usize).max(2);
    let nb = ((frac_b * n as f64).floor() as usize).max(2);
    let a = &chain[..na];
    let b = &chain[n - nb..];
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if constant(a) && constant(b) {
        return Err(Error::ZeroVariance("Geweke segments are constant".into()));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let va = spectral_variance_at_zero(a) / na as f64;
    let vb = spectral_variance_at_zero(b) / nb as f64;
    if !(va + vb > 0.0) {
        return Err(Error::ZeroVariance("Geweke segments have zero variance".into()));
    }
    Ok((mean(a) - mean(b)) / (va + vb).sqrt())
}

/// Monte-Carlo standard error of a chain mean by non-overlapping batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || x.len() < 2 * batches {
        return Err(Error::PreconditionViolation(format!("{} draws cannot form {batches} batches", x.len())));
    }
    let size = x.len() / batches;
    let means: Vec<f64> =
        (0..batches).map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let mu = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// Summary written by the `diagnose` command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_draws: usize,
    pub waic: Option<f64>,
    pub lppd: Option<f64>,
    pub p_waic: Option<f64>,
    pub crps: Option<f64>,
    /// Geweke z per scalar trace.
    pub geweke: BTreeMap<String, f64>,
    pub acceptance_rho: Vec<Option<f64>>,
    pub acceptance_psi: Vec<Option<f64>>,
    /// Extra scalar quantities (e.g. clustering SS ratios).
    pub extra: BTreeMap<String, f64>,
}

impl DiagnosticsReport {
    /// Flat `key = value` lines.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        writeln!(out, "n_draws = {}", self.n_draws)?;
        writeln!(out, "waic = {}", opt(self.waic))?;
        writeln!(out, "lppd = {}", opt(self.lppd))?;
        writeln!(out, "p_waic = {}", opt(self.p_waic))?;
        writeln!(out, "crps = {}", opt(self.crps))?;
        for (i, a) in self.acceptance_rho.iter().enumerate() {
            writeln!(out, "acceptance_rho[{}] = {}", i + 1, opt(*a))?;
        }
        for (i, a) in self.acceptance_psi.iter().enumerate() {
            writeln!(out, "acceptance_psi[{}] = {}", i + 1, opt(*a))?;
        }
        for (k, v) in &self.geweke {
            writeln!(out, "geweke.{k} = {v}")?;
        }
        for (k, v) in &self.extra {
            writeln!(out, "{k} = {v}")?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Format(e.to_string()))
    }
}
