//! Uniform box partition of a compact state space.
//!
//! Index layout for a partition with `N` indices:
//!
//! ```text
//! 0 .. N-3   ordinary grid cells (row-major grid order, attractor cells skipped)
//! N-2        sink (receives out-of-domain mass, no geometric extent)
//! N-1        attractor (all grid cells overlapping the attractor box, lumped)
//! ```
//!
//! The restricted index space used by the LP is `0 .. N-1`, i.e. every index
//! except the attractor.

use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix_seed;

/// Result of a point lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellIndex {
    Index(usize),
    Outside,
}

impl CellIndex {
    pub fn index(self) -> Option<usize> {
        match self {
            CellIndex::Index(i) => Some(i),
            CellIndex::Outside => None,
        }
    }
}

/// How sample points are placed inside a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleScheme {
    /// Centered sublattice, as square as the dimension allows.
    UniformSubgrid,
    /// One uniform point per sublattice box, seeded per cell.
    StratifiedRandom,
}

/// Axis-aligned box used to select the attractor cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorBox {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    bounds: Vec<(f64, f64)>,
    counts: Vec<usize>,
    wrap: Vec<bool>,
    widths: Vec<f64>,
    attractor_region: AttractorBox,
    /// Flat grid ids lumped into the attractor, ascending.
    attractor_cells: Vec<usize>,
    /// Flat grid id -> partition index.
    grid_to_index: Vec<usize>,
    /// Ordinary index -> flat grid id.
    index_to_grid: Vec<usize>,
}

impl Partition {
    /// Builds a uniform grid and lumps every cell overlapping `attractor` into
    /// the attractor index.
    pub fn build_grid(
        bounds: &[(f64, f64)],
        counts: &[usize],
        wrap: &[bool],
        attractor: AttractorBox,
    ) -> Result<Self> {
        let dim = bounds.len();
        if dim == 0 {
            return Err(Error::Config(
                "partition needs at least one dimension".into(),
            ));
        }
        if counts.len() != dim
            || wrap.len() != dim
            || attractor.center.len() != dim
            || attractor.half_widths.len() != dim
        {
            return Err(Error::Config(
                "bounds, counts, wrap and attractor box differ in dimension".into(),
            ));
        }
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "dimension {d}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
            if counts[d] < 2 {
                return Err(Error::Config(format!(
                    "dimension {d}: need at least 2 cells, got {}",
                    counts[d]
                )));
            }
            if !(attractor.half_widths[d] > 0.0 && attractor.half_widths[d].is_finite()) {
                return Err(Error::Config(format!(
                    "dimension {d}: attractor half-width must be positive"
                )));
            }
        }
        let widths: Vec<f64> = bounds
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), &n)| (hi - lo) / n as f64)
            .collect();
        let total: usize = counts.iter().product();

        // Per-dimension mask of cell coordinates overlapping the attractor box
        // with positive length.
        let overlapping: Vec<Vec<bool>> = (0..dim)
            .map(|d| {
                let lo = bounds[d].0;
                let r_lo = attractor.center[d] - attractor.half_widths[d];
                let r_hi = attractor.center[d] + attractor.half_widths[d];
                let eps = 1e-9 * widths[d];
                (0..counts[d])
                    .map(|i| {
                        let c_lo = lo + i as f64 * widths[d];
                        let c_hi = lo + (i + 1) as f64 * widths[d];
                        c_hi.min(r_hi) - c_lo.max(r_lo) > eps
                    })
                    .collect()
            })
            .collect();
        let mut attractor_cells: Vec<usize> = (0..total)
            .filter(|&flat| {
                let mut rest = flat;
                (0..dim).rev().all(|d| {
                    let c = rest % counts[d];
                    rest /= counts[d];
                    overlapping[d][c]
                })
            })
            .collect();
        attractor_cells.sort_unstable();
        if attractor_cells.is_empty() {
            return Err(Error::Config(
                "attractor region does not cover any grid cell".into(),
            ));
        }
        if attractor_cells.len() == total {
            return Err(Error::Config(
                "attractor region covers every grid cell".into(),
            ));
        }

        let n_ordinary = total - attractor_cells.len();
        let attractor_index = n_ordinary + 1;
        let mut grid_to_index = vec![attractor_index; total];
        let mut index_to_grid = Vec::with_capacity(n_ordinary);
        let mut lumped = attractor_cells.iter().peekable();
        for (flat, slot) in grid_to_index.iter_mut().enumerate() {
            if lumped.peek() == Some(&&flat) {
                lumped.next();
                continue;
            }
            *slot = index_to_grid.len();
            index_to_grid.push(flat);
        }

        Ok(Partition {
            bounds: bounds.to_vec(),
            counts: counts.to_vec(),
            wrap: wrap.to_vec(),
            widths,
            attractor_region: attractor,
            attractor_cells,
            grid_to_index,
            index_to_grid,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn wrap(&self) -> &[bool] {
        &self.wrap
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn attractor_region(&self) -> &AttractorBox {
        &self.attractor_region
    }

    /// Flat grid ids lumped into the attractor.
    pub fn attractor_cells(&self) -> &[usize] {
        &self.attractor_cells
    }

    /// Total number of indices `N` (ordinary cells, sink and attractor).
    pub fn n_indices(&self) -> usize {
        self.index_to_grid.len() + 2
    }

    pub fn n_ordinary(&self) -> usize {
        self.index_to_grid.len()
    }

    /// Size of the restricted index space (`N - 1`).
    pub fn restricted_len(&self) -> usize {
        self.index_to_grid.len() + 1
    }

    pub fn sink_index(&self) -> usize {
        self.index_to_grid.len()
    }

    pub fn attractor_index(&self) -> usize {
        self.index_to_grid.len() + 1
    }

    pub fn n_grid_cells(&self) -> usize {
        self.grid_to_index.len()
    }

    /// Partition index of a flat grid id.
    pub fn index_of_grid(&self, flat: usize) -> usize {
        self.grid_to_index[flat]
    }

    /// Flat grid id of an ordinary cell.
    pub fn grid_of_index(&self, index: usize) -> Option<usize> {
        self.index_to_grid.get(index).copied()
    }

    /// Multi-index of a flat grid id (last dimension fastest).
    pub fn grid_coords(&self, flat: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dim()];
        let mut rest = flat;
        for d in (0..self.dim()).rev() {
            coords[d] = rest % self.counts[d];
            rest /= self.counts[d];
        }
        coords
    }

    pub fn flat_index(&self, coords: &[usize]) -> usize {
        flat_of(coords, &self.counts)
    }

    /// Lower corner and upper corner of a grid cell.
    pub fn grid_cell_box(&self, flat: usize) -> Vec<(f64, f64)> {
        self.grid_coords(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| {
                let lo = self.bounds[d].0 + i as f64 * self.widths[d];
                (lo, lo + self.widths[d])
            })
            .collect()
    }

    pub fn grid_cell_center(&self, flat: usize) -> Vec<f64> {
        self.grid_cell_box(flat)
            .iter()
            .map(|&(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.widths.iter().product()
    }

    /// Total volume lumped into the attractor index.
    pub fn attractor_volume(&self) -> f64 {
        self.attractor_cells.len() as f64 * self.cell_volume()
    }

    pub fn domain_volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Maps wrapped coordinates into `[lo, hi)`.
    pub fn wrap_point(&self, point: &mut [f64]) {
        for d in 0..self.dim() {
            if self.wrap[d] && point[d].is_finite() {
                let (lo, hi) = self.bounds[d];
                let span = hi - lo;
                let mut v = lo + (point[d] - lo).rem_euclid(span);
                if v >= hi {
                    v = lo;
                }
                point[d] = v;
            }
        }
    }

    /// Grid coordinate of `value` in dimension `d`, assuming it is already wrapped.
    fn coord(&self, d: usize, value: f64) -> Option<usize> {
        let (lo, hi) = self.bounds[d];
        if !(value >= lo && value <= hi) {
            return None;
        }
        let raw = ((value - lo) / self.widths[d]).floor();
        let n = self.counts[d];
        if raw < 0.0 {
            return Some(0);
        }
        Some((raw as usize).min(n - 1))
    }

    /// Flat grid id containing the point, or `None` outside the domain.
    pub fn locate_grid(&self, point: &[f64]) -> Option<usize> {
        let mut p = point.to_vec();
        self.wrap_point(&mut p);
        let mut flat = 0;
        for (d, &v) in p.iter().enumerate() {
            let c = self.coord(d, v)?;
            flat = flat * self.counts[d] + c;
        }
        Some(flat)
    }

    /// Partition index containing the point after wrapping. Cells are half-open
    /// `[lo, hi)` except the last cell per dimension, which is closed.
    pub fn locate(&self, point: &[f64]) -> CellIndex {
        debug_assert_eq!(point.len(), self.dim());
        match self.locate_grid(point) {
            Some(flat) => CellIndex::Index(self.grid_to_index[flat]),
            None => CellIndex::Outside,
        }
    }

    pub fn is_attractor(&self, point: &[f64]) -> bool {
        self.locate(point) == CellIndex::Index(self.attractor_index())
    }

    /// Sample points strictly inside an ordinary cell.
    pub fn cell_samples(
        &self,
        cell: usize,
        samples_per_cell: usize,
        scheme: SampleScheme,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let flat = self.grid_of_index(cell).ok_or_else(|| {
            Error::Usage(format!(
                "cell_samples: index {cell} is not an ordinary cell"
            ))
        })?;
        if samples_per_cell == 0 {
            return Err(Error::Usage(
                "cell_samples: samples_per_cell must be at least 1".into(),
            ));
        }
        let cell_box = self.grid_cell_box(flat);
        let layout = balanced_layout(samples_per_cell, self.dim());
        let mut rng = match scheme {
            SampleScheme::UniformSubgrid => None,
            SampleScheme::StratifiedRandom => {
                Some(ChaCha8Rng::seed_from_u64(mix_seed(seed, &[cell as u64])))
            }
        };
        let mut points = Vec::with_capacity(samples_per_cell);
        let mut multi = vec![0usize; self.dim()];
        for _ in 0..samples_per_cell {
            let point: Vec<f64> = (0..self.dim())
                .map(|d| {
                    let (lo, hi) = cell_box[d];
                    let sub = (hi - lo) / layout[d] as f64;
                    let frac = match rng.as_mut() {
                        None => 0.5,
                        Some(r) => {
                            let u: f64 = Open01.sample(r);
                            u
                        }
                    };
                    lo + (multi[d] as f64 + frac) * sub
                })
                .collect();
            points.push(point);
            for d in (0..self.dim()).rev() {
                multi[d] += 1;
                if multi[d] < layout[d] {
                    break;
                }
                multi[d] = 0;
            }
        }
        Ok(points)
    }
}

fn flat_of(coords: &[usize], counts: &[usize]) -> usize {
    coords
        .iter()
        .zip(counts)
        .fold(0, |acc, (&c, &n)| acc * n + c)
}

/// Factors `k` into `dim` integers whose product is `k`, as balanced as
/// possible, larger factors first (10 in 2-D gives `[5, 2]`).
pub fn balanced_layout(k: usize, dim: usize) -> Vec<usize> {
    if dim <= 1 {
        return vec![k; dim.max(1)];
    }
    let mut f = 1;
    for cand in 1..=k {
        if k.is_multiple_of(cand) && (cand as f64).powi(dim as i32) <= k as f64 + 1e-9 {
            f = cand;
        }
    }
    let mut rest = balanced_layout(k / f, dim - 1);
    rest.push(f);
    rest
}
