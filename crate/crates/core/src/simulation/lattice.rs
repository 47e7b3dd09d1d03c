//! The 52-location visual-field lattice.
//!
//! An 8 × 9 grid of test points (rows top to bottom, columns nasal to
//! temporal for a right eye). Each row keeps a contiguous run of columns and
//! the two blind-spot points at `(3, 7)` and `(4, 7)` are removed. Locations
//! are adjacent when they share an edge or a corner.

use crate::data::SpatialStructure;

/// Inclusive column range kept in each grid row.
const ROW_COLUMNS: [(usize, usize); 8] = [(3, 6), (2, 7), (1, 8), (0, 8), (0, 8), (1, 8), (2, 7), (3, 6)];
const BLIND_SPOT: [(usize, usize); 2] = [(3, 7), (4, 7)];
/// The eight inferior-nasal locations.
const INFERIOR_NASAL: [(usize, usize); 8] = [(4, 0), (4, 1), (4, 2), (5, 1), (5, 2), (6, 2), (6, 3), (7, 3)];

pub const N_LOCATIONS: usize = 52;

/// `(row, column)` of every location in index order (row-major).
pub fn coordinates() -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(N_LOCATIONS);
    for (r, &(lo, hi)) in ROW_COLUMNS.iter().enumerate() {
        for c in lo..=hi {
            if !BLIND_SPOT.contains(&(r, c)) {
                out.push((r, c));
            }
        }
    }
    out
}

/// Undirected king-move edges between locations (0-based indices).
pub fn edges() -> Vec<(usize, usize)> {
    let coords = coordinates();
    let mut out = Vec::new();
    for a in 0..coords.len() {
        for b in (a + 1)..coords.len() {
            let dr = coords[a].0.abs_diff(coords[b].0);
            let dc = coords[a].1.abs_diff(coords[b].1);
            if dr <= 1 && dc <= 1 {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn spatial_structure() -> SpatialStructure {
    SpatialStructure::from_edges(N_LOCATIONS, &edges()).expect("lattice edges are in range")
}

/// Indices of the inferior-nasal region.
pub fn inferior_nasal() -> Vec<usize> {
    let coords = coordinates();
    INFERIOR_NASAL
        .iter()
        .map(|p| coords.iter().position(|q| q == p).expect("region lies on the lattice"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_shape() {
        assert_eq!(coordinates().len(), 52);
        let s = spatial_structure();
        s.validate().unwrap();
        let deg = s.degrees().unwrap();
        assert!(deg.iter().all(|&d| (1.0..=8.0).contains(&d)));
        assert_eq!(inferior_nasal().len(), 8);
    }

    #[test]
    fn lattice_is_connected_and_region_contiguous() {
        let e = edges();
        let reach = |nodes: &[usize]| {
            let mut seen = vec![nodes[0]];
            let mut i = 0;
            while i < seen.len() {
                let v = seen[i];
                for &(a, b) in &e {
                    for (x, y) in [(a, b), (b, a)] {
                        if x == v && nodes.contains(&y) && !seen.contains(&y) {
                            seen.push(y);
                        }
                    }
                }
                i += 1;
            }
            seen.len()
        };
        let all: Vec<usize> = (0..52).collect();
        assert_eq!(reach(&all), 52);
        let region = inferior_nasal();
        assert_eq!(reach(&region), 8);
    }
}
