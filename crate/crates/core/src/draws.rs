//! Retained posterior draws, their CSV form, and the pointwise log-likelihood store.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::kernels::TemporalKernel;
use crate::likelihood::Family;
use crate::model::{LoadingsPrior, Shrinkage};
use crate::psbp::{mgp_precisions, open_stick_weights, stick_weights, Truncation};

/// Entries kept in memory before the log-likelihood matrix moves to a temp file.
pub const DEFAULT_SPILL_LIMIT: usize = 10_000_000;

/// One retained state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    pub beta: DVector<f64>,
    /// `T × k`, row `t` is `η_t`.
    pub eta: DMatrix<f64>,
    /// `mO × k`.
    pub lambda: DMatrix<f64>,
    /// Atoms per factor (empty for Gaussian loadings).
    pub theta: Vec<Vec<f64>>,
    /// Zero-based atom index per factor and cell.
    pub xi: Vec<Vec<usize>>,
    /// Stick variables per factor, stick and cell.
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub delta: Vec<f64>,
    pub kappa: DMatrix<f64>,
    pub rho: f64,
    pub psi: f64,
    pub upsilon: DMatrix<f64>,
    /// Per-cell observation variance (ones for binomial data).
    pub sigma2: DVector<f64>,
}

impl Draw {
    pub fn tau(&self, shrinkage: Shrinkage) -> Vec<f64> {
        match shrinkage {
            Shrinkage::Mgp => mgp_precisions(&self.delta),
            Shrinkage::IndependentGamma => self.delta.clone(),
        }
    }

    /// Weights of factor `j` at `cell` that sum to one; in slice mode the
    /// uninstantiated tail is folded into the last atom.
    pub fn closed_weights(&self, j: usize, cell: usize, truncation: Truncation) -> Vec<f64> {
        let a: Vec<f64> = self.alpha[j].iter().map(|s| s[cell]).collect();
        match truncation {
            Truncation::Finite(_) => stick_weights(&a),
            Truncation::Slice => {
                if a.is_empty() {
                    vec![1.0]
                } else {
                    let (mut w, residual) = open_stick_weights(&a);
                    *w.last_mut().expect("non-empty") += residual;
                    w
                }
            }
        }
    }
}

/// Shapes and model settings shared by all draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub n_locations: usize,
    pub n_types: usize,
    pub times: Vec<f64>,
    pub k: usize,
    pub p: usize,
    pub family: Family,
    pub temporal_kernel: TemporalKernel,
    pub loadings_prior: LoadingsPrior,
    pub shrinkage: Shrinkage,
    pub truncation: Truncation,
    /// `(cell, t)` of each log-likelihood row.
    pub observed: Vec<(usize, usize)>,
}

impl DrawsMeta {
    pub fn n_cells(&self) -> usize {
        self.n_locations * self.n_types
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }
}

/// Metropolis acceptance rates of one chain after burn-in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub chain: usize,
    pub rho: Option<f64>,
    pub psi: Option<f64>,
}

/// Pointwise log-likelihood, one column of observed cell-times per draw.
///
/// Columns live in memory until `limit` entries, then everything moves to an
/// anonymous temp file and further columns are appended there.
#[derive(Debug)]
pub struct LogLikStore {
    rows: usize,
    cols: usize,
    limit: usize,
    mem: Vec<f64>,
    spill: Option<File>,
}

impl LogLikStore {
    pub fn new(rows: usize) -> Self {
        Self::with_limit(rows, DEFAULT_SPILL_LIMIT)
    }

    pub fn with_limit(rows: usize, limit: usize) -> Self {
        LogLikStore { rows, cols: 0, limit, mem: Vec::new(), spill: None }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_spilled(&self) -> bool {
        self.spill.is_some()
    }

    pub fn push(&mut self, column: &[f64]) -> Result<()> {
        if column.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "log-likelihood column has {} rows, expected {}",
                column.len(),
                self.rows
            )));
        }
        if self.spill.is_none() && (self.cols + 1) * self.rows > self.limit {
            let mut file = tempfile::tempfile()?;
            write_f64s(&mut file, &self.mem)?;
            self.mem = Vec::new();
            self.spill = Some(file);
        }
        match &mut self.spill {
            Some(file) => {
                file.seek(SeekFrom::End(0))?;
                write_f64s(file, column)?;
            }
            None => self.mem.extend_from_slice(column),
        }
        self.cols += 1;
        Ok(())
    }

    /// Calls `f` on every column in order.
    pub fn for_each_column<F: FnMut(&[f64])>(&self, mut f: F) -> Result<()> {
        match &self.spill {
            None => {
                if self.rows == 0 {
                    for _ in 0..self.cols {
                        f(&[]);
                    }
                } else {
                    self.mem.chunks(self.rows).for_each(f);
                }
            }
            Some(file) => {
                let mut handle = file.try_clone()?;
                handle.seek(SeekFrom::Start(0))?;
                let mut reader = BufReader::new(handle);
                let mut bytes = vec![0u8; self.rows * 8];
                let mut col = vec![0.0; self.rows];
                for _ in 0..self.cols {
                    reader.read_exact(&mut bytes)?;
                    for (v, b) in col.iter_mut().zip(bytes.chunks_exact(8)) {
                        *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
                    }
                    f(&col);
                }
            }
        }
        Ok(())
    }

    /// Dense `rows × cols` copy.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        let mut j = 0;
        self.for_each_column(|c| {
            out.column_mut(j).copy_from_slice(c);
            j += 1;
        })?;
        Ok(out)
    }

    /// Appends all columns of `other`.
    pub fn append(&mut self, other: &LogLikStore) -> Result<()> {
        if other.rows != self.rows {
            return Err(Error::DimensionMismatch("log-likelihood stores differ in rows".into()));
        }
        let mut err = None;
        other.for_each_column(|c| {
            if err.is_none() {
                if let Err(e) = self.push(c) {
                    err = Some(e);
                }
            }
        })?;
        err.map_or(Ok(()), Err)
    }
}

fn write_f64s(file: &mut File, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// All retained draws of one or more chains.
#[derive(Debug)]
pub struct PosteriorDraws {
    pub meta: DrawsMeta,
    pub draws: Vec<Draw>,
    pub loglik: LogLikStore,
    pub acceptance: Vec<Acceptance>,
}

impl PosteriorDraws {
    pub fn new(meta: DrawsMeta) -> Self {
        let rows = meta.observed.len();
        PosteriorDraws { meta, draws: Vec::new(), loglik: LogLikStore::new(rows), acceptance: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Concatenates two sets of draws from the same model.
    pub fn merge(mut self, other: PosteriorDraws) -> Result<PosteriorDraws> {
        if self.meta != other.meta {
            return Err(Error::DimensionMismatch("cannot merge draws of different models".into()));
        }
        self.loglik.append(&other.loglik)?;
        self.draws.extend(other.draws);
        self.acceptance.extend(other.acceptance);
        Ok(self)
    }

    /// Indices of draws belonging to `chain`.
    pub fn chain_indices(&self, chain: usize) -> Vec<usize> {
        (0..self.draws.len()).filter(|&i| self.draws[i].chain == chain).collect()
    }

    /// Trace of a named scalar such as `rho`, `psi`, `sigma2[3]` or `theta[1,2]`.
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let layout = column_layout(&self.draws, &self.meta);
        let pos = header_names(&layout, &self.meta).iter().position(|h| h == name)?;
        let mut out = Vec::with_capacity(self.draws.len());
        for d in &self.draws {
            match draw_row(d, &self.meta, &layout)[pos] {
                Some(v) => out.push(v),
                None => return None,
            }
        }
        Some(out)
    }

    /// Writes the wide draws CSV: one row per draw, one column per scalar.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let layout = column_layout(&self.draws, &self.meta);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header_names(&layout, &self.meta))?;
        for d in &self.draws {
            let row = draw_row(d, &self.meta, &layout);
            w.write_record(row.iter().map(|v| v.map(fmt_f64).unwrap_or_default()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads draws written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(meta: DrawsMeta, input: R) -> Result<Vec<Draw>> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
        let mut max_atoms = vec![0usize; meta.k];
        let mut max_sticks = vec![0usize; meta.k];
        for h in &header {
            if let Some(ix) = parse_indices(h, "theta") {
                max_atoms[ix[0] - 1] = max_atoms[ix[0] - 1].max(ix[1]);
            }
            if let Some(ix) = parse_indices(h, "alpha") {
                max_sticks[ix[0] - 1] = max_sticks[ix[0] - 1].max(ix[1]);
            }
        }
        let (cells, t_len, k, p, o) = (meta.n_cells(), meta.n_times(), meta.k, meta.p, meta.n_types);
        let mut draws = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let get = |name: &str| -> Result<Option<f64>> {
                let i = *index
                    .get(name)
                    .ok_or_else(|| Error::Format(format!("draws CSV lacks column {name}")))?;
                let s = rec.get(i).unwrap_or("");
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Format(format!("bad number {s:?} in column {name}")))
                }
            };
            let req = |name: &str| -> Result<f64> {
                get(name)?.ok_or_else(|| Error::Format(format!("empty value in column {name}")))
            };
            let mut d = Draw {
                chain: req("chain")? as usize,
                iteration: req("iteration")? as usize,
                beta: DVector::zeros(p),
                eta: DMatrix::zeros(t_len, k),
                lambda: DMatrix::zeros(cells, k),
                theta: vec![Vec::new(); if meta.loadings_prior.is_psbp() { k } else { 0 }],
                xi: vec![Vec::new(); if meta.loadings_prior.is_psbp() { k } else { 0 }],
                alpha: vec![Vec::new(); if meta.loadings_prior.is_psbp() { k } else { 0 }],
                delta: vec![0.0; k],
                kappa: DMatrix::zeros(o, o),
                rho: req("rho")?,
                psi: req("psi")?,
                upsilon: DMatrix::zeros(k, k),
                sigma2: DVector::zeros(cells),
            };
            for i in 0..p {
                d.beta[i] = req(&format!("beta[{}]", i + 1))?;
            }
            for t in 0..t_len {
                for j in 0..k {
                    d.eta[(t, j)] = req(&format!("eta[{},{}]", t + 1, j + 1))?;
                }
            }
            for c in 0..cells {
                for j in 0..k {
                    d.lambda[(c, j)] = req(&format!("lambda[{},{}]", c + 1, j + 1))?;
                }
                d.sigma2[c] = req(&format!("sigma2[{}]", c + 1))?;
            }
            for j in 0..k {
                d.delta[j] = req(&format!("delta[{}]", j + 1))?;
                for i in 0..k {
                    d.upsilon[(i, j)] = req(&format!("upsilon[{},{}]", i + 1, j + 1))?;
                }
            }
            for a in 0..o {
                for b in 0..o {
                    d.kappa[(a, b)] = req(&format!("kappa[{},{}]", a + 1, b + 1))?;
                }
            }
            if meta.loadings_prior.is_psbp() {
                for j in 0..k {
                    for l in 0..max_atoms[j] {
                        match get(&format!("theta[{},{}]", j + 1, l + 1))? {
                            Some(v) => d.theta[j].push(v),
                            None => break,
                        }
                    }
                    d.xi[j] = (0..cells)
                        .map(|c| req(&format!("xi[{},{}]", j + 1, c + 1)).map(|v| v as usize - 1))
                        .collect::<Result<_>>()?;
                    for l in 0..max_sticks[j] {
                        if get(&format!("alpha[{},{},1]", j + 1, l + 1))?.is_none() {
                            break;
                        }
                        let stick = (0..cells)
                            .map(|c| req(&format!("alpha[{},{},{}]", j + 1, l + 1, c + 1)))
                            .collect::<Result<_>>()?;
                        d.alpha[j].push(stick);
                    }
                }
            }
            draws.push(d);
        }
        Ok(draws)
    }

    /// Log-likelihood CSV: one row per draw, one column per observed cell-time.
    pub fn write_loglik_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = self
            .meta
            .observed
            .iter()
            .map(|(c, t)| format!("ll[{},{}]", c + 1, t + 1))
            .collect();
        w.write_record(&header)?;
        let mut err = None;
        self.loglik.for_each_column(|col| {
            if err.is_none() {
                if let Err(e) = w.write_record(col.iter().map(|v| fmt_f64(*v))) {
                    err = Some(e);
                }
            }
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_loglik_csv<R: Read>(rows: usize, input: R) -> Result<LogLikStore> {
        let mut r = csv::Reader::from_reader(input);
        let mut store = LogLikStore::new(rows);
        for rec in r.records() {
            let rec = rec?;
            let col = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad log-likelihood {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            store.push(&col)?;
        }
        Ok(store)
    }
}

/// Number of atom and stick columns per factor needed to hold every draw.
fn column_layout(draws: &[Draw], meta: &DrawsMeta) -> (Vec<usize>, Vec<usize>) {
    let k = if meta.loadings_prior.is_psbp() { meta.k } else { 0 };
    let mut atoms = vec![0; k];
    let mut sticks = vec![0; k];
    for d in draws {
        for j in 0..k {
            atoms[j] = atoms[j].max(d.theta[j].len());
            sticks[j] = sticks[j].max(d.alpha[j].len());
        }
    }
    (atoms, sticks)
}

fn header_names(layout: &(Vec<usize>, Vec<usize>), meta: &DrawsMeta) -> Vec<String> {
    let (cells, t_len, k, o) = (meta.n_cells(), meta.n_times(), meta.k, meta.n_types);
    let mut h = vec!["chain".to_string(), "iteration".to_string()];
    h.extend((1..=meta.p).map(|i| format!("beta[{i}]")));
    for t in 1..=t_len {
        h.extend((1..=k).map(|j| format!("eta[{t},{j}]")));
    }
    for c in 1..=cells {
        h.extend((1..=k).map(|j| format!("lambda[{c},{j}]")));
    }
    let (atoms, sticks) = layout;
    for j in 0..atoms.len() {
        h.extend((1..=atoms[j]).map(|l| format!("theta[{},{l}]", j + 1)));
    }
    for j in 0..atoms.len() {
        h.extend((1..=cells).map(|c| format!("xi[{},{c}]", j + 1)));
    }
    for j in 0..sticks.len() {
        for l in 1..=sticks[j] {
            h.extend((1..=cells).map(|c| format!("alpha[{},{l},{c}]", j + 1)));
        }
    }
    h.extend((1..=k).map(|j| format!("delta[{j}]")));
    for b in 1..=o {
        h.extend((1..=o).map(|a| format!("kappa[{a},{b}]")));
    }
    h.push("rho".into());
    h.push("psi".into());
    for j in 1..=k {
        h.extend((1..=k).map(|i| format!("upsilon[{i},{j}]")));
    }
    h.extend((1..=cells).map(|c| format!("sigma2[{c}]")));
    h
}

fn draw_row(d: &Draw, meta: &DrawsMeta, layout: &(Vec<usize>, Vec<usize>)) -> Vec<Option<f64>> {
    let (cells, t_len, k, o) = (meta.n_cells(), meta.n_times(), meta.k, meta.n_types);
    let mut r: Vec<Option<f64>> = vec![Some(d.chain as f64), Some(d.iteration as f64)];
    r.extend(d.beta.iter().map(|&v| Some(v)));
    for t in 0..t_len {
        r.extend((0..k).map(|j| Some(d.eta[(t, j)])));
    }
    for c in 0..cells {
        r.extend((0..k).map(|j| Some(d.lambda[(c, j)])));
    }
    let (atoms, sticks) = layout;
    for j in 0..atoms.len() {
        r.extend((0..atoms[j]).map(|l| d.theta[j].get(l).copied()));
    }
    for j in 0..atoms.len() {
        r.extend(d.xi[j].iter().map(|&x| Some((x + 1) as f64)));
    }
    for j in 0..sticks.len() {
        for l in 0..sticks[j] {
            match d.alpha[j].get(l) {
                Some(s) => r.extend(s.iter().map(|&v| Some(v))),
                None => r.extend(std::iter::repeat_n(None, cells)),
            }
        }
    }
    r.extend(d.delta.iter().map(|&v| Some(v)));
    for b in 0..o {
        r.extend((0..o).map(|a| Some(d.kappa[(a, b)])));
    }
    r.push(Some(d.rho));
    r.push(Some(d.psi));
    for j in 0..k {
        r.extend((0..k).map(|i| Some(d.upsilon[(i, j)])));
    }
    r.extend(d.sigma2.iter().map(|&v| Some(v)));
    r
}

/// `name[a,b,...]` → one-based indices.
fn parse_indices(header: &str, name: &str) -> Option<Vec<usize>> {
    let rest = header.strip_prefix(name)?.strip_prefix('[')?.strip_suffix(']')?;
    rest.split(',').map(|s| s.parse().ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_meta(prior: LoadingsPrior) -> DrawsMeta {
        DrawsMeta {
            n_locations: 3,
            n_types: 1,
            times: vec![0.0, 1.0],
            k: 2,
            p: 1,
            family: Family::Gaussian,
            temporal_kernel: TemporalKernel::Exponential,
            loadings_prior: prior,
            shrinkage: Shrinkage::Mgp,
            truncation: Truncation::Slice,
            observed: vec![(0, 0), (1, 0)],
        }
    }

    fn toy_draw(chain: usize, sticks: usize) -> Draw {
        Draw {
            chain,
            iteration: 7,
            beta: DVector::from_vec(vec![0.1]),
            eta: DMatrix::from_fn(2, 2, |i, j| i as f64 + 0.5 * j as f64),
            lambda: DMatrix::from_fn(3, 2, |i, j| (i * j) as f64 / 3.0),
            theta: vec![vec![1.0 / 3.0; sticks], vec![-2.0]],
            xi: vec![vec![0, 1, 0], vec![0, 0, 0]],
            alpha: vec![vec![vec![0.25, -1e-300, 3.0]; sticks], vec![vec![0.0, 0.0, 0.0]]],
            delta: vec![1.5, 20.0],
            kappa: DMatrix::from_element(1, 1, 0.7),
            rho: 0.99,
            psi: 0.3,
            upsilon: DMatrix::identity(2, 2),
            sigma2: DVector::from_vec(vec![0.01, 0.02, 0.03]),
        }
    }

    #[test]
    fn csv_round_trip_with_ragged_atoms() {
        let meta = toy_meta(LoadingsPrior::PsbpSpatial);
        let mut pd = PosteriorDraws::new(meta.clone());
        pd.draws.push(toy_draw(0, 2));
        pd.draws.push(toy_draw(1, 4));
        let mut buf = Vec::new();
        pd.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("chain,iteration,beta[1],\"eta[1,1]\""));
        assert!(text.contains("theta[1,4]"));
        let back = PosteriorDraws::read_csv(meta, buf.as_slice()).unwrap();
        assert_eq!(back, pd.draws);
    }

    #[test]
    fn gaussian_loadings_have_no_stick_columns() {
        let meta = toy_meta(LoadingsPrior::GaussianIid);
        let mut pd = PosteriorDraws::new(meta.clone());
        let mut d = toy_draw(0, 1);
        d.theta.clear();
        d.xi.clear();
        d.alpha.clear();
        pd.draws.push(d);
        let mut buf = Vec::new();
        pd.write_csv(&mut buf).unwrap();
        assert!(!String::from_utf8(buf.clone()).unwrap().contains("theta"));
        assert_eq!(PosteriorDraws::read_csv(meta, buf.as_slice()).unwrap(), pd.draws);
    }

    #[test]
    fn loglik_spills_to_disk() {
        let mut mem = LogLikStore::new(3);
        let mut disk = LogLikStore::with_limit(3, 5);
        for i in 0..4 {
            let col = [i as f64, -0.5 * i as f64, 1e-3];
            mem.push(&col).unwrap();
            disk.push(&col).unwrap();
        }
        assert!(!mem.is_spilled());
        assert!(disk.is_spilled());
        assert_eq!(mem.to_matrix().unwrap(), disk.to_matrix().unwrap());
        assert!(matches!(disk.push(&[1.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn merge_is_associative() {
        let meta = toy_meta(LoadingsPrior::PsbpSpatial);
        let make = |c: usize| {
            let mut pd = PosteriorDraws::new(meta.clone());
            pd.draws.push(toy_draw(c, 1));
            pd.loglik.push(&[c as f64, 1.0]).unwrap();
            pd
        };
        let left = make(0).merge(make(1)).unwrap().merge(make(2)).unwrap();
        let right = make(0).merge(make(1).merge(make(2)).unwrap()).unwrap();
        assert_eq!(left.draws, right.draws);
        assert_eq!(left.loglik.to_matrix().unwrap(), right.loglik.to_matrix().unwrap());
        assert_eq!(left.chain_indices(1), vec![1]);
    }

    #[test]
    fn closed_weights_sum_to_one() {
        let d = toy_draw(0, 3);
        for c in 0..3 {
            let w = d.closed_weights(0, c, Truncation::Slice);
            assert_eq!(w.len(), 3);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let w = d.closed_weights(0, c, Truncation::Finite(4));
            assert_eq!(w.len(), 4);
        }
    }

    #[test]
    fn trace_by_name() {
        let meta = toy_meta(LoadingsPrior::PsbpSpatial);
        let mut pd = PosteriorDraws::new(meta);
        pd.draws.push(toy_draw(0, 2));
        pd.draws.push(toy_draw(0, 2));
        assert_eq!(pd.trace("rho"), Some(vec![0.99, 0.99]));
        assert_eq!(pd.trace("sigma2[2]"), Some(vec![0.02, 0.02]));
        assert_eq!(pd.trace("nope"), None);
    }
}
