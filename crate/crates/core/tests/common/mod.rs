#![allow(dead_code)]

use nalgebra::DMatrix;
use spfactor::data::{ObservationSet, SpatialStructure};
use spfactor::diagnostics::batch_means_se;

/// Path graph on `m` locations, one type, visits at `0, 1, …`, standard
/// normal observations.
pub fn path_data(m: usize, t_len: usize) -> ObservationSet {
    let edges: Vec<(usize, usize)> = (1..m).map(|i| (i - 1, i)).collect();
    let spatial = SpatialStructure::from_edges(m, &edges).unwrap();
    let y: Vec<Vec<Vec<f64>>> =
        (0..t_len).map(|t| vec![(0..m).map(|i| ((i * 7 + t * 3) % 5) as f64 - 2.0).collect()]).collect();
    ObservationSet::from_tensor(&y, (0..t_len).map(|t| t as f64).collect(), spatial).unwrap()
}

pub fn all_missing(mut data: ObservationSet) -> ObservationSet {
    data.missing = DMatrix::from_element(data.y.nrows(), data.y.ncols(), true);
    data
}

pub struct Moment {
    pub mean: f64,
    pub se: f64,
}

pub fn moment(x: &[f64]) -> Moment {
    Moment { mean: x.iter().sum::<f64>() / x.len() as f64, se: batch_means_se(x, 50).unwrap() }
}

/// Asserts the chain mean is within three Monte-Carlo standard errors of `target`.
pub fn assert_within_3se(name: &str, x: &[f64], target: f64) {
    let m = moment(x);
    assert!(
        (m.mean - target).abs() < 3.0 * m.se,
        "{name}: mean {} vs {target} (se {})",
        m.mean,
        m.se
    );
}
