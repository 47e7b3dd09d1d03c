//! Observed-data containers and the canonical stacking order.
//!
//! A cell is a (type, location) pair. Cells are stacked type-major with the
//! location index running fastest, so cell `c = o * m + i` for type `o` and
//! location `i` (both zero-based). All per-visit vectors use this order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::Family;

/// Spatial neighbourhood information shared by all observation types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpatialStructure {
    /// Symmetric 0/1 adjacency `W` with zero diagonal.
    Areal { adjacency: DMatrix<f64> },
    /// Symmetric non-negative distances with zero diagonal.
    Point { distances: DMatrix<f64> },
}

impl SpatialStructure {
    pub fn n_locations(&self) -> usize {
        match self {
            SpatialStructure::Areal { adjacency } => adjacency.nrows(),
            SpatialStructure::Point { distances } => distances.nrows(),
        }
    }

    /// Builds an areal structure from 0-based undirected edges.
    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut w = DMatrix::zeros(m, m);
        for &(a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::IndexOutOfRange(format!("edge ({a},{b}) with m={m}")));
            }
            if a != b {
                w[(a, b)] = 1.0;
                w[(b, a)] = 1.0;
            }
        }
        Ok(SpatialStructure::Areal { adjacency: w })
    }

    /// Builds a point structure with Euclidean distances between coordinates.
    pub fn from_coordinates(coords: &[(f64, f64)]) -> Self {
        let m = coords.len();
        let d = DMatrix::from_fn(m, m, |i, j| {
            let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
            (dx * dx + dy * dy).sqrt()
        });
        SpatialStructure::Point { distances: d }
    }

    /// Row sums of the adjacency (the diagonal of `D_w`).
    pub fn degrees(&self) -> Option<DVector<f64>> {
        match self {
            SpatialStructure::Areal { adjacency } => Some(DVector::from_fn(adjacency.nrows(), |i, _| {
                adjacency.row(i).sum()
            })),
            SpatialStructure::Point { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpatialStructure::Areal { adjacency: w } => {
                check_square_symmetric(w, "adjacency")?;
                for i in 0..w.nrows() {
                    if w[(i, i)] != 0.0 {
                        return Err(Error::InvalidData(format!("adjacency diagonal non-zero at {i}")));
                    }
                    if w.row(i).iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(Error::InvalidData(format!("adjacency row {i} is not 0/1")));
                    }
                    if w.row(i).sum() <= 0.0 {
                        return Err(Error::IsolatedLocation(i));
                    }
                }
                Ok(())
            }
            SpatialStructure::Point { distances: d } => {
                check_square_symmetric(d, "distances")?;
                for i in 0..d.nrows() {
                    if d[(i, i)] != 0.0 {
                        return Err(Error::InvalidData(format!("distance diagonal non-zero at {i}")));
                    }
                }
                if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::InvalidData("distances must be finite and non-negative".into()));
                }
                Ok(())
            }
        }
    }
}

fn check_square_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!("{what} must be square")));
    }
    for i in 0..a.nrows() {
        for j in 0..i {
            if a[(i, j)] != a[(j, i)] {
                return Err(Error::InvalidData(format!("{what} is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// The stacked data tensor with trials, covariates, visit times and spatial structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// Number of locations `m`.
    pub n_locations: usize,
    /// Number of observation types `O`.
    pub n_types: usize,
    /// `mO × T`; column `t` is the stacked visit vector `Y_t`.
    pub y: DMatrix<f64>,
    /// Binomial trial counts, same shape as `y`.
    pub trials: Option<DMatrix<f64>>,
    /// One `mO × p` design matrix per visit.
    pub covariates: Vec<DMatrix<f64>>,
    /// Follow-up times `x_1 < … < x_T`.
    pub times: DVector<f64>,
    pub spatial: SpatialStructure,
    /// `mO × T`, `true` where the observation is missing.
    pub missing: DMatrix<bool>,
}

impl ObservationSet {
    /// Builds a complete (no missing cells) set from a `[t][o][i]` tensor.
    pub fn from_tensor(
        y: &[Vec<Vec<f64>>],
        times: Vec<f64>,
        spatial: SpatialStructure,
    ) -> Result<Self> {
        let t_len = y.len();
        if t_len == 0 || y[0].is_empty() {
            return Err(Error::InvalidData("empty observation tensor".into()));
        }
        let n_types = y[0].len();
        let n_locations = y[0][0].len();
        let cells = n_types * n_locations;
        let mut mat = DMatrix::zeros(cells, t_len);
        for (t, slab) in y.iter().enumerate() {
            if slab.len() != n_types || slab.iter().any(|r| r.len() != n_locations) {
                return Err(Error::DimensionMismatch(format!("visit {t} has a ragged tensor slab")));
            }
            for (o, row) in slab.iter().enumerate() {
                for (i, &v) in row.iter().enumerate() {
                    mat[(o * n_locations + i, t)] = v;
                }
            }
        }
        if times.len() != t_len {
            return Err(Error::DimensionMismatch(format!(
                "{} times for {t_len} visits",
                times.len()
            )));
        }
        Ok(ObservationSet {
            n_locations,
            n_types,
            y: mat,
            trials: None,
            covariates: vec![DMatrix::zeros(cells, 0); t_len],
            times: DVector::from_vec(times),
            spatial,
            missing: DMatrix::from_element(cells, t_len, false),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_locations * self.n_types
    }

    pub fn n_times(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.first().map_or(0, |x| x.ncols())
    }

    pub fn cell_index(&self, o: usize, i: usize) -> usize {
        o * self.n_locations + i
    }

    /// `(type, location)` of a stacked cell index.
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.n_locations, cell % self.n_locations)
    }

    pub fn is_observed(&self, cell: usize, t: usize) -> bool {
        !self.missing[(cell, t)]
    }

    /// The stacked visit vector `Y_t` (zero-based `t`).
    pub fn stack(&self, t: usize) -> Result<DVector<f64>> {
        if t >= self.n_times() {
            return Err(Error::IndexOutOfRange(format!("visit {t} with T={}", self.n_times())));
        }
        Ok(self.y.column(t).into_owned())
    }

    /// Inverse of [`stack`](Self::stack): `[o][i]` slab of a stacked vector.
    pub fn unstack(&self, v: &DVector<f64>) -> Result<Vec<Vec<f64>>> {
        unstack(v, self.n_types, self.n_locations)
    }

    /// Adds an intercept column to every visit's design matrix.
    pub fn with_intercept(mut self) -> Self {
        let cells = self.n_cells();
        self.covariates = self
            .covariates
            .into_iter()
            .map(|x| {
                let p = x.ncols();
                let mut out = DMatrix::from_element(cells, p + 1, 1.0);
                out.columns_mut(1, p).copy_from(&x);
                out
            })
            .collect();
        self
    }

    /// Restricts the set to the first `t_keep` visits.
    pub fn truncate_visits(&self, t_keep: usize) -> Result<Self> {
        if t_keep == 0 || t_keep > self.n_times() {
            return Err(Error::IndexOutOfRange(format!("cannot keep {t_keep} of {} visits", self.n_times())));
        }
        Ok(ObservationSet {
            n_locations: self.n_locations,
            n_types: self.n_types,
            y: self.y.columns(0, t_keep).into_owned(),
            trials: self.trials.as_ref().map(|n| n.columns(0, t_keep).into_owned()),
            covariates: self.covariates[..t_keep].to_vec(),
            times: self.times.rows(0, t_keep).into_owned(),
            spatial: self.spatial.clone(),
            missing: self.missing.columns(0, t_keep).into_owned(),
        })
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        let cells = self.n_cells();
        let t_len = self.n_times();
        if t_len < 2 {
            return Err(Error::InvalidData(format!("at least two visits required, got {t_len}")));
        }
        if self.y.nrows() != cells || self.missing.shape() != self.y.shape() {
            return Err(Error::DimensionMismatch("y / missing mask shape".into()));
        }
        if self.times.len() != t_len {
            return Err(Error::DimensionMismatch("times length".into()));
        }
        for t in 1..t_len {
            if !(self.times[t] > self.times[t - 1]) {
                return Err(Error::NonIncreasingTimes(format!(
                    "x[{}]={} <= x[{}]={}",
                    t,
                    self.times[t],
                    t - 1,
                    self.times[t - 1]
                )));
            }
        }
        if self.covariates.len() != t_len {
            return Err(Error::DimensionMismatch("one design matrix per visit required".into()));
        }
        let p = self.n_covariates();
        if self.covariates.iter().any(|x| x.nrows() != cells || x.ncols() != p) {
            return Err(Error::DimensionMismatch("design matrices must be mO × p".into()));
        }
        if self.spatial.n_locations() != self.n_locations {
            return Err(Error::DimensionMismatch(format!(
                "spatial structure has {} locations, data has {}",
                self.spatial.n_locations(),
                self.n_locations
            )));
        }
        self.spatial.validate()?;
        for t in 0..t_len {
            for c in 0..cells {
                if self.is_observed(c, t) && !self.y[(c, t)].is_finite() {
                    return Err(Error::InvalidData(format!("non-finite y at (t={t}, cell={c})")));
                }
            }
        }
        if family == Family::Binomial {
            let n = self.trials.as_ref().ok_or(Error::MissingTrials)?;
            if n.shape() != self.y.shape() {
                return Err(Error::DimensionMismatch("trials shape".into()));
            }
            if self.missing.iter().any(|&m| m) {
                return Err(Error::InvalidData("binomial cells must be complete".into()));
            }
            for t in 0..t_len {
                for c in 0..cells {
                    let (yv, nv) = (self.y[(c, t)], n[(c, t)]);
                    if nv < 0.0 || nv.fract() != 0.0 || yv < 0.0 || yv.fract() != 0.0 {
                        return Err(Error::InvalidData(format!(
                            "binomial counts must be non-negative integers at (t={t}, cell={c})"
                        )));
                    }
                    if yv > nv {
                        return Err(Error::CountExceedsTrials { t, cell: c, y: yv, n: nv });
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the observation, spatial and times CSV files.
    ///
    /// `trials_column` names the header of the trials column when present.
    pub fn read_csv<R1: Read, R2: Read, R3: Read>(
        observations: R1,
        spatial: R2,
        times: R3,
        trials_column: Option<&str>,
    ) -> Result<Self> {
        let times = read_times(times)?;
        let table = read_observation_table(observations, trials_column)?;
        let t_len = times.len();
        let m = table.max_location;
        let n_types = table.max_type;
        let spatial = read_spatial(spatial, m)?;
        let cells = m * n_types;
        let p = table.n_covariates;
        let mut y = DMatrix::zeros(cells, t_len);
        let mut missing = DMatrix::from_element(cells, t_len, true);
        let mut trials = trials_column.map(|_| DMatrix::zeros(cells, t_len));
        let mut covariates = vec![DMatrix::zeros(cells, p); t_len];
        for row in &table.rows {
            if row.t == 0 || row.t > t_len {
                return Err(Error::IndexOutOfRange(format!("time_index {} outside 1..={t_len}", row.t)));
            }
            let (t, c) = (row.t - 1, (row.o - 1) * m + (row.i - 1));
            if let Some(v) = row.y {
                y[(c, t)] = v;
                missing[(c, t)] = false;
            }
            if let (Some(n), Some(nv)) = (trials.as_mut(), row.trials) {
                n[(c, t)] = nv;
            }
            for (k, &x) in row.x.iter().enumerate() {
                covariates[t][(c, k)] = x;
            }
        }
        Ok(ObservationSet {
            n_locations: m,
            n_types,
            y,
            trials,
            covariates,
            times: DVector::from_vec(times),
            spatial,
            missing,
        })
    }

    /// Writes the observation CSV (`time_index,type_id,location_id,y[,trials][,x1..xp]`).
    pub fn write_observations<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let p = self.n_covariates();
        let mut header = vec!["time_index".to_string(), "type_id".into(), "location_id".into(), "y".into()];
        if self.trials.is_some() {
            header.push("trials".into());
        }
        header.extend((1..=p).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for t in 0..self.n_times() {
            for c in 0..self.n_cells() {
                let (o, i) = self.cell_coords(c);
                let mut rec = vec![(t + 1).to_string(), (o + 1).to_string(), (i + 1).to_string()];
                rec.push(if self.missing[(c, t)] { "NA".into() } else { fmt_f64(self.y[(c, t)]) });
                if let Some(n) = &self.trials {
                    rec.push(fmt_f64(n[(c, t)]));
                }
                rec.extend((0..p).map(|k| fmt_f64(self.covariates[t][(c, k)])));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_times<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_index", "time_value"])?;
        for (t, v) in self.times.iter().enumerate() {
            w.write_record([(t + 1).to_string(), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the adjacency edge list (`i,j`, 1-based, `i < j`). Point data is
    /// not representable as an edge list and is rejected.
    pub fn write_spatial<W: Write>(&self, out: W) -> Result<()> {
        let SpatialStructure::Areal { adjacency } = &self.spatial else {
            return Err(Error::KindMismatch("only areal structures are written as edge lists".into()));
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j"])?;
        for i in 0..adjacency.nrows() {
            for j in (i + 1)..adjacency.ncols() {
                if adjacency[(i, j)] != 0.0 {
                    w.write_record([(i + 1).to_string(), (j + 1).to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Inverse of the stacking map for an arbitrary `mO` vector.
pub fn unstack(v: &DVector<f64>, n_types: usize, n_locations: usize) -> Result<Vec<Vec<f64>>> {
    if v.len() != n_types * n_locations {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} is not mO = {}",
            v.len(),
            n_types * n_locations
        )));
    }
    Ok((0..n_types)
        .map(|o| (0..n_locations).map(|i| v[o * n_locations + i]).collect())
        .collect())
}

/// Shortest representation that round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

struct ObservationRow {
    t: usize,
    o: usize,
    i: usize,
    y: Option<f64>,
    trials: Option<f64>,
    x: Vec<f64>,
}

struct ObservationTable {
    rows: Vec<ObservationRow>,
    max_type: usize,
    max_location: usize,
    n_covariates: usize,
}

fn parse_index(s: &str, what: &str) -> Result<usize> {
    let v: usize = s
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{what} '{s}' is not a positive integer")))?;
    if v == 0 {
        return Err(Error::Format(format!("{what} indices are 1-based")));
    }
    Ok(v)
}

fn parse_value(s: &str, what: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("{what} '{s}' is not a number")))
}

fn read_observation_table<R: Read>(input: R, trials_column: Option<&str>) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let expected = ["time_index", "type_id", "location_id", "y"];
    for (k, name) in expected.iter().enumerate() {
        if header.get(k) != Some(*name) {
            return Err(Error::Format(format!("observation column {} must be '{name}'", k + 1)));
        }
    }
    let mut next = 4;
    let trials_idx = match trials_column {
        Some(name) => {
            if header.get(4) != Some(name) {
                return Err(Error::Format(format!("expected trials column '{name}' after 'y'")));
            }
            next = 5;
            Some(4)
        }
        None => None,
    };
    let n_covariates = header.len() - next;
    let mut rows = Vec::new();
    let (mut max_type, mut max_location) = (0, 0);
    for rec in rdr.records() {
        let rec = rec?;
        let t = parse_index(&rec[0], "time_index")?;
        let o = parse_index(&rec[1], "type_id")?;
        let i = parse_index(&rec[2], "location_id")?;
        let y = parse_value(&rec[3], "y")?;
        let trials = match trials_idx {
            Some(k) => Some(parse_value(&rec[k], "trials")?.ok_or_else(|| {
                Error::Format("trials may not be missing".into())
            })?),
            None => None,
        };
        let x = (next..header.len())
            .map(|k| parse_value(&rec[k], "covariate")?.ok_or_else(|| Error::Format("covariates may not be missing".into())))
            .collect::<Result<Vec<_>>>()?;
        max_type = max_type.max(o);
        max_location = max_location.max(i);
        rows.push(ObservationRow { t, o, i, y, trials, x });
    }
    if rows.is_empty() {
        return Err(Error::Format("observation file has no rows".into()));
    }
    Ok(ObservationTable { rows, max_type, max_location, n_covariates })
}

fn read_times<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Format("times file must have columns time_index,time_value".into()));
        }
        let t = parse_index(&rec[0], "time_index")?;
        let v = parse_value(&rec[1], "time_value")?.ok_or_else(|| Error::Format("missing time value".into()))?;
        map.insert(t, v);
    }
    if map.keys().copied().ne(1..=map.len()) {
        return Err(Error::Format("time indices must be 1..T without gaps".into()));
    }
    Ok(map.into_values().collect())
}

/// Reads an edge list (`i,j`) or coordinates (`location_id,coord1,coord2`).
fn read_spatial<R: Read>(input: R, m: usize) -> Result<SpatialStructure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let width = rdr.headers()?.len();
    match width {
        2 => {
            let mut edges = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                edges.push((parse_index(&rec[0], "i")? - 1, parse_index(&rec[1], "j")? - 1));
            }
            SpatialStructure::from_edges(m, &edges)
        }
        3 => {
            let mut coords = vec![None; m];
            for rec in rdr.records() {
                let rec = rec?;
                let i = parse_index(&rec[0], "location_id")?;
                if i > m {
                    return Err(Error::IndexOutOfRange(format!("location {i} > m={m}")));
                }
                let x = parse_value(&rec[1], "coord1")?.ok_or_else(|| Error::Format("missing coordinate".into()))?;
                let y = parse_value(&rec[2], "coord2")?.ok_or_else(|| Error::Format("missing coordinate".into()))?;
                coords[i - 1] = Some((x, y));
            }
            let coords = coords
                .into_iter()
                .enumerate()
                .map(|(i, c)| c.ok_or_else(|| Error::Format(format!("no coordinates for location {}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            Ok(SpatialStructure::from_coordinates(&coords))
        }
        _ => Err(Error::Format("spatial file must be an edge list (i,j) or coordinates (location_id,coord1,coord2)".into())),
    }
}
