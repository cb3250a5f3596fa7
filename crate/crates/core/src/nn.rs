//! Exact nearest-neighbor queries between point sets.
//!
//! Ties in distance go to the lowest target index, in both the brute-force and
//! the grid-accelerated search, so the two modes always agree.

use alloc::vec;
use alloc::vec::Vec;

use glam::DVec3;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    Brute,
    #[default]
    Accelerated,
}

/// Nearest neighbors in both directions between `P` and `Q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NearestNeighborMap {
    /// For each point of `P`, the index of its nearest point in `Q`.
    pub p_to_q: Vec<usize>,
    /// For each point of `Q`, the index of its nearest point in `P`.
    pub q_to_p: Vec<usize>,
}

#[inline]
fn dist2(a: DVec3, b: DVec3) -> f64 {
    (a - b).length_squared()
}

#[inline]
fn closer(candidate: (f64, usize), best: (f64, usize)) -> bool {
    candidate.0 < best.0 || (candidate.0 == best.0 && candidate.1 < best.1)
}

/// Index and squared distance of the nearest target, by exhaustive scan.
pub fn nearest_brute(query: DVec3, targets: &[DVec3]) -> Option<(usize, f64)> {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, &t) in targets.iter().enumerate() {
        let cand = (dist2(query, t), i);
        if closer(cand, best) {
            best = cand;
        }
    }
    (best.1 != usize::MAX).then_some((best.1, best.0))
}

/// Uniform grid over a point set.
#[derive(Debug, Clone)]
pub struct PointGrid<'a> {
    points: &'a [DVec3],
    lo: DVec3,
    cell: f64,
    dims: [usize; 3],
    /// Start of each cell's run in `order`; length `cells + 1`.
    starts: Vec<usize>,
    /// Point indices bucketed by cell, ascending within a cell.
    order: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [DVec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let (lo, hi) = points
            .iter()
            .fold((points[0], points[0]), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let extent = hi - lo;
        let longest = extent.max_element();
        // About two points per cell along the longest axis for a volume fill.
        let per_axis = libm::ceil(libm::cbrt(points.len() as f64 / 2.0)).max(1.0);
        let cell = if longest > 0.0 { longest / per_axis } else { 1.0 };
        let cap = (4 * points.len()).max(1);
        let mut dims = [0usize; 3];
        for a in 0..3 {
            dims[a] = ((extent[a] / cell) as usize + 1).min(cap);
        }
        let cell_count = dims[0] * dims[1] * dims[2];
        let mut grid = Self {
            points,
            lo,
            cell,
            dims,
            starts: vec![0; cell_count + 1],
            order: vec![0; points.len()],
        };
        let ids: Vec<usize> = points
            .iter()
            .map(|&p| grid.flat(grid.cell_of(p)))
            .collect();
        for &c in &ids {
            grid.starts[c + 1] += 1;
        }
        for c in 0..cell_count {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        for (i, &c) in ids.iter().enumerate() {
            grid.order[fill[c]] = i;
            fill[c] += 1;
        }
        Ok(grid)
    }

    fn cell_of(&self, p: DVec3) -> [usize; 3] {
        let rel = (p - self.lo) / self.cell;
        core::array::from_fn(|a| {
            let c = libm::floor(rel[a]);
            if c <= 0.0 {
                0
            } else {
                (c as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn scan_cell(&self, c: [usize; 3], query: DVec3, best: &mut (f64, usize)) {
        let f = self.flat(c);
        for &i in &self.order[self.starts[f]..self.starts[f + 1]] {
            let cand = (dist2(query, self.points[i]), i);
            if closer(cand, *best) {
                *best = cand;
            }
        }
    }

    /// Index and squared distance of the nearest point to `query`.
    pub fn nearest(&self, query: DVec3) -> (usize, f64) {
        let home = self.cell_of(query);
        let mut best = (f64::INFINITY, usize::MAX);
        let mut ring = 0usize;
        loop {
            self.scan_shell(home, ring, query, &mut best);
            // Any cell outside the block of radius `ring` lies beyond one of its
            // faces; bound the distance to those cells from below.
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                if home[a] > ring {
                    let face = self.lo[a] + (home[a] - ring) as f64 * self.cell;
                    bound = bound.min(query[a] - face);
                }
                if home[a] + ring + 1 < self.dims[a] {
                    let face = self.lo[a] + (home[a] + ring + 1) as f64 * self.cell;
                    bound = bound.min(face - query[a]);
                }
            }
            if bound == f64::INFINITY {
                break;
            }
            // `>` rather than `>=` so equidistant lower-index points are still seen.
            if bound > 0.0 && bound * bound > best.0 {
                break;
            }
            ring += 1;
        }
        (best.1, best.0)
    }

    fn scan_shell(&self, home: [usize; 3], ring: usize, query: DVec3, best: &mut (f64, usize)) {
        let r = ring as isize;
        let range = |a: usize| {
            let lo = (home[a] as isize - r).max(0) as usize;
            let hi = ((home[a] as isize + r) as usize).min(self.dims[a] - 1);
            (lo, hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        let on_shell = |c: usize, a: usize| (c as isize - home[a] as isize).abs() == r;
        for z in z0..=z1 {
            for y in y0..=y1 {
                let zy_shell = on_shell(z, 2) || on_shell(y, 1);
                if zy_shell {
                    for x in x0..=x1 {
                        self.scan_cell([x, y, z], query, best);
                    }
                } else {
                    for x in [home[0] as isize - r, home[0] as isize + r] {
                        if x >= 0 && (x as usize) < self.dims[0] {
                            self.scan_cell([x as usize, y, z], query, best);
                        }
                        if r == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }
}

/// Nearest target index for each query.
pub fn nearest_indices(queries: &[DVec3], targets: &[DVec3], mode: SearchMode) -> Result<Vec<usize>> {
    Ok(nearest_with_distances(queries, targets, mode)?
        .into_iter()
        .map(|(i, _)| i)
        .collect())
}

/// Nearest target index and squared distance for each query.
pub fn nearest_with_distances(
    queries: &[DVec3],
    targets: &[DVec3],
    mode: SearchMode,
) -> Result<Vec<(usize, f64)>> {
    if queries.is_empty() || targets.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    Ok(match mode {
        SearchMode::Brute => queries
            .iter()
            .map(|&q| nearest_brute(q, targets).expect("targets are nonempty"))
            .collect(),
        SearchMode::Accelerated => {
            let grid = PointGrid::new(targets)?;
            queries.iter().map(|&q| grid.nearest(q)).collect()
        }
    })
}

pub fn nearest_neighbors(p: &[DVec3], q: &[DVec3], mode: SearchMode) -> Result<NearestNeighborMap> {
    Ok(NearestNeighborMap {
        p_to_q: nearest_indices(p, q, mode)?,
        q_to_p: nearest_indices(q, p, mode)?,
    })
}
