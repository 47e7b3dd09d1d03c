//! Posterior clustering: co-clustering probabilities, the loading-probability
//! matrix `w`, informative-factor selection, k-means with the gap statistic,
//! between/total sum-of-squares ratios and per-cluster trend p-values.
//!
//! Cluster labels are one-based throughout.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};

/// Off-diagonal thresholds a factor must straddle to be informative.
pub const INFORMATIVE_MIN: f64 = 0.2;
pub const INFORMATIVE_MAX: f64 = 0.8;

pub const KMEANS_RESTARTS: usize = 25;
pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;
pub const GAP_REFERENCE_SETS: usize = 50;

/// `P(ξ_j(c) = ξ_j(c'))` over retained draws for factor `j` (zero-based).
pub fn cocluster_probability(draws: &PosteriorDraws, j: usize) -> Result<DMatrix<f64>> {
    if draws.is_empty() {
        return Err(Error::DegenerateDraws(0));
    }
    let cells = draws.meta.n_cells();
    let mut counts = DMatrix::<u32>::zeros(cells, cells);
    for d in &draws.draws {
        let xi = d
            .xi
            .get(j)
            .ok_or_else(|| Error::PreconditionViolation(format!("draws carry no indicators for factor {}", j + 1)))?;
        for a in 0..cells {
            for b in (a + 1)..cells {
                if xi[a] == xi[b] {
                    counts[(a, b)] += 1;
                }
            }
        }
    }
    let n = draws.len() as f64;
    Ok(DMatrix::from_fn(cells, cells, |a, b| match a.cmp(&b) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Less => counts[(a, b)] as f64 / n,
        std::cmp::Ordering::Greater => counts[(b, a)] as f64 / n,
    }))
}

/// Co-clustering matrices for every factor.
pub fn cocluster_all(draws: &PosteriorDraws) -> Result<Vec<DMatrix<f64>>> {
    (0..draws.meta.k).map(|j| cocluster_probability(draws, j)).collect()
}

/// `(min, max)` of the off-diagonal entries; `(1, 1)` for a single cell.
pub fn off_diagonal_range(g: &DMatrix<f64>) -> (f64, f64) {
    let n = g.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                lo = lo.min(g[(a, b)]);
                hi = hi.max(g[(a, b)]);
            }
        }
    }
    if n < 2 {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Length of the leading run of informative factors.
pub fn select_kstar(g_all: &[DMatrix<f64>]) -> usize {
    g_all
        .iter()
        .take_while(|g| {
            let (lo, hi) = off_diagonal_range(g);
            lo < INFORMATIVE_MIN && hi > INFORMATIVE_MAX
        })
        .count()
}

/// Posterior-mean mixture weights of the first `kstar` factors, concatenated
/// per cell. Each factor block has as many columns as the largest atom count
/// seen across draws.
pub fn build_w(draws: &PosteriorDraws, kstar: usize) -> Result<DMatrix<f64>> {
    if kstar == 0 || kstar > draws.meta.k {
        return Err(Error::InvalidParameter(format!("kstar must be in 1..={}, got {kstar}", draws.meta.k)));
    }
    if draws.is_empty() {
        return Err(Error::DegenerateDraws(0));
    }
    let cells = draws.meta.n_cells();
    let trunc = draws.meta.truncation;
    let widths: Vec<usize> = (0..kstar)
        .map(|j| {
            draws
                .draws
                .iter()
                .map(|d| d.theta.get(j).map_or(0, |t| t.len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::PreconditionViolation("draws carry no stick-breaking weights".into()));
    }
    let total: usize = widths.iter().sum();
    let mut w = DMatrix::zeros(cells, total);
    let n = draws.len() as f64;
    for d in &draws.draws {
        let mut offset = 0;
        for (j, &width) in widths.iter().enumerate() {
            for c in 0..cells {
                for (l, v) in d.closed_weights(j, c, trunc).into_iter().enumerate() {
                    w[(c, offset + l)] += v / n;
                }
            }
            offset += width;
        }
    }
    Ok(w)
}

fn sq_dist(w: &DMatrix<f64>, row: usize, center: &[f64]) -> f64 {
    center.iter().enumerate().map(|(d, c)| (w[(row, d)] - c).powi(2)).sum()
}

/// `(BSS, TSS, BSS/TSS)` for one-based labels.
pub fn ss_quantities(w: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, f64, f64)> {
    let (n, dim) = w.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    if labels.iter().any(|&l| l == 0) {
        return Err(Error::InvalidParameter("labels are one-based".into()));
    }
    let grand: Vec<f64> = (0..dim).map(|d| w.column(d).mean()).collect();
    let mut centers = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (r, &l) in labels.iter().enumerate() {
        sizes[l - 1] += 1;
        for d in 0..dim {
            centers[l - 1][d] += w[(r, d)];
        }
    }
    for (c, &s) in centers.iter_mut().zip(&sizes) {
        if s > 0 {
            c.iter_mut().for_each(|v| *v /= s as f64);
        }
    }
    let mut bss = 0.0;
    let mut tss = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        tss += sq_dist(w, r, &grand);
        bss += centers[l - 1].iter().zip(&grand).map(|(c, g)| (c - g).powi(2)).sum::<f64>();
    }
    let ratio = if tss > 0.0 { (bss / tss).clamp(0.0, 1.0) } else { 0.0 };
    Ok((bss, tss, ratio))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// One-based cluster label per row.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub within_ss: f64,
    pub ss_ratio: f64,
}

fn kmeans_pp_init<R: Rng + ?Sized>(w: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = w.nrows();
    let row = |r: usize| w.row(r).iter().copied().collect::<Vec<f64>>();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|r| sq_dist(w, r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (r, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 && d > 0.0 {
                    chosen = r;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick));
        let c = centers.last().expect("just pushed").clone();
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(w, r, &c));
        }
    }
    centers
}

fn lloyd(w: &DMatrix<f64>, mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let (n, dim) = w.shape();
    let k = centers.len();
    let mut labels = vec![0usize; n];
    let mut prev = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        let mut wss = 0.0;
        for (r, label) in labels.iter_mut().enumerate() {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(i, c)| (i, sq_dist(w, r, c)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            *label = best;
            wss += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (r, &l) in labels.iter().enumerate() {
            sizes[l] += 1;
            for d in 0..dim {
                sums[l][d] += w[(r, d)];
            }
        }
        for i in 0..k {
            if sizes[i] > 0 {
                centers[i] = sums[i].iter().map(|s| s / sizes[i] as f64).collect();
            } else {
                // empty cluster: move it to the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| sq_dist(w, a, &centers[labels[a]]).total_cmp(&sq_dist(w, b, &centers[labels[b]])))
                    .expect("non-empty data");
                centers[i] = w.row(far).iter().copied().collect();
            }
        }
        if (prev - wss).abs() <= KMEANS_TOL * prev.max(1e-300) || wss == 0.0 {
            break;
        }
        prev = wss;
    }
    // final assignment against the final centers
    let mut wss = 0.0;
    for (r, label) in labels.iter_mut().enumerate() {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, sq_dist(w, r, c)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        *label = best;
        wss += d;
    }
    (labels, centers, wss)
}

fn kmeans_with<R: Rng + ?Sized>(w: &DMatrix<f64>, k: usize, restarts: usize, rng: &mut R) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for _ in 0..restarts {
        let init = kmeans_pp_init(w, k, rng);
        let run = lloyd(w, init);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

/// k-means with k-means++ seeding and [`KMEANS_RESTARTS`] restarts.
pub fn kmeans(w: &DMatrix<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = w.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("K must be in 1..={n}, got {k}")));
    }
    if k > 1 && (1..n).all(|r| w.row(r) == w.row(0)) {
        return Err(Error::DegenerateData("all rows are identical".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels, centers, within_ss) = kmeans_with(w, k, KMEANS_RESTARTS, &mut rng);
    let labels: Vec<usize> = relabel_by_first_occurrence(&labels);
    let (_, _, ss_ratio) = ss_quantities(w, &labels)?;
    Ok(KMeansResult { labels, centers, within_ss, ss_ratio })
}

/// One-based labels numbered in order of first appearance.
fn relabel_by_first_occurrence(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; labels.iter().copied().max().map_or(0, |m| m + 1)];
    let mut next = 1;
    labels
        .iter()
        .map(|&l| {
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Gap statistic for `K = 1..=k_max` with `b` uniform bounding-box reference
/// sets; returns the smallest `K` with `Gap(K) ≥ Gap(K+1) − s_{K+1}`.
pub fn gap_statistic(w: &DMatrix<f64>, k_max: usize, b: usize, seed: u64) -> Result<usize> {
    if k_max == 0 || b == 0 {
        return Err(Error::InvalidParameter("k_max and B must be at least 1".into()));
    }
    let (n, dim) = w.shape();
    let k_max = k_max.min(n);
    if k_max == 1 {
        return Ok(1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo: Vec<f64> = (0..dim).map(|d| w.column(d).min()).collect();
    let hi: Vec<f64> = (0..dim).map(|d| w.column(d).max()).collect();
    let log_w = |wss: f64| wss.max(1e-300).ln();
    let identical = (1..n).all(|r| w.row(r) == w.row(0));
    let mut gap = Vec::with_capacity(k_max);
    let mut s = Vec::with_capacity(k_max);
    let references: Vec<DMatrix<f64>> = (0..b)
        .map(|_| DMatrix::from_fn(n, dim, |_, d| lo[d] + (hi[d] - lo[d]) * rng.random::<f64>()))
        .collect();
    for k in 1..=k_max {
        let observed = if identical { 0.0 } else { kmeans_with(w, k, KMEANS_RESTARTS, &mut rng).2 };
        let ref_logs: Vec<f64> = references.iter().map(|r| log_w(kmeans_with(r, k, 5, &mut rng).2)).collect();
        let mean = ref_logs.iter().sum::<f64>() / b as f64;
        let sd = (ref_logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64).sqrt();
        gap.push(mean - log_w(observed));
        s.push(sd * (1.0 + 1.0 / b as f64).sqrt());
    }
    for k in 0..k_max - 1 {
        if gap[k] >= gap[k + 1] - s[k + 1] {
            return Ok(k + 1);
        }
    }
    Ok(k_max)
}

/// Direction of a one-sided slope test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

/// OLS slope of `y` on `x` and its one-sided t-test p-value.
pub fn slope_pvalue(x: &[f64], y: &[f64], side: Side) -> Result<(f64, f64)> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::PreconditionViolation(format!("slope test needs >= 3 paired points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let scale: f64 = y.iter().map(|v| (v - my).powi(2)).sum::<f64>().max(my * my).max(f64::MIN_POSITIVE);
    if rss <= 1e-24 * scale {
        return Err(Error::ZeroResidualVariance(0));
    }
    let df = (n - 2) as f64;
    let se = (rss / df / sxx).sqrt();
    let t = slope / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p = match side {
        Side::Lower => dist.cdf(t),
        Side::Upper => 1.0 - dist.cdf(t),
    };
    Ok((slope, p))
}

/// Mean one-sided slope p-value per cluster, from per-cell posterior-mean
/// series (`cells × times`).
pub fn cluster_trend_pvalues(series: &DMatrix<f64>, times: &[f64], labels: &[usize], side: Side) -> Result<Vec<f64>> {
    if labels.len() != series.nrows() || times.len() != series.ncols() {
        return Err(Error::DimensionMismatch("series, times and labels disagree".into()));
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (c, &l) in labels.iter().enumerate() {
        let y: Vec<f64> = series.row(c).iter().copied().collect();
        let (_, p) = slope_pvalue(times, &y, side).map_err(|e| match e {
            Error::ZeroResidualVariance(_) => Error::ZeroResidualVariance(c),
            other => other,
        })?;
        sums[l - 1] += p;
        counts[l - 1] += 1;
    }
    Ok(sums.iter().zip(&counts).map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN }).collect())
}

/// Output of the full clustering pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub g: Vec<DMatrix<f64>>,
    pub w: DMatrix<f64>,
    /// Number of leading informative factors (0 means none; `w` then uses factor 1).
    pub kstar: usize,
    /// One-based.
    pub labels: Vec<usize>,
    pub ss_psbp: f64,
    pub gap_k: usize,
    pub trend_pvalues: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSettings {
    pub k_max: usize,
    pub reference_sets: usize,
    pub seed: u64,
    pub side: Side,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings { k_max: 8, reference_sets: GAP_REFERENCE_SETS, seed: 0, side: Side::Lower }
    }
}

/// Runs co-clustering, factor selection, `w`, the gap statistic and k-means.
/// `series` (cells × times, with `times`) adds trend p-values when given.
pub fn summarize(
    draws: &PosteriorDraws,
    settings: &ClusterSettings,
    series: Option<(&DMatrix<f64>, &[f64])>,
) -> Result<ClusterSummary> {
    let g = cocluster_all(draws)?;
    let kstar = select_kstar(&g);
    let w = build_w(draws, kstar.max(1))?;
    let identical = (1..w.nrows()).all(|r| w.row(r) == w.row(0));
    let (gap_k, labels, ss_psbp) = if identical {
        (1, vec![1; w.nrows()], 0.0)
    } else {
        let gap_k = gap_statistic(&w, settings.k_max, settings.reference_sets, settings.seed)?;
        let km = kmeans(&w, gap_k, settings.seed)?;
        (gap_k, km.labels, km.ss_ratio)
    };
    let trend_pvalues = match series {
        Some((s, times)) => cluster_trend_pvalues(s, times, &labels, settings.side)?,
        None => Vec::new(),
    };
    Ok(ClusterSummary { g, w, kstar, labels, ss_psbp, gap_k, trend_pvalues })
}

impl ClusterSummary {
    /// `type_id,location_id,label,cluster_pvalue` with one-based ids.
    pub fn write_csv<W: Write>(&self, n_locations: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["type_id", "location_id", "label", "cluster_pvalue"])?;
        for (c, &l) in self.labels.iter().enumerate() {
            let p = self.trend_pvalues.get(l - 1).map_or_else(String::new, |p| crate::data::fmt_f64(*p));
            w.write_record([
                (c / n_locations + 1).to_string(),
                (c % n_locations + 1).to_string(),
                l.to_string(),
                p,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
