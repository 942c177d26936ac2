//! Sample-based Ulam matrices of the Perron-Frobenius operator.
//!
//! Row `i` of a full matrix is the empirical distribution of the partition
//! index reached from the sample points of cell `i`. Images leaving the domain
//! are routed to the sink; the sink and the attractor rows are unit
//! self-loops. The restricted matrix drops the attractor row and column.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ControlGrid, ControlSystem, NoiseModel, StageCost};
use crate::partition::{CellIndex, Partition, SampleScheme};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    /// `N x N`, row-stochastic.
    Full,
    /// `(N-1) x (N-1)`, attractor removed, row-substochastic.
    Restricted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub kind: MatrixKind,
    pub matrix: CsrMatrix,
}

impl TransferMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Checks entries in `[0, 1]` and row sums (`= 1` for full, `<= 1` for
    /// restricted) within `tol`. The error names the first offending row.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let m = &self.matrix;
        if m.nrows() != m.ncols() {
            return Err(Error::Validation(format!(
                "matrix is {}x{}, not square",
                m.nrows(),
                m.ncols()
            )));
        }
        for r in 0..m.nrows() {
            if let Some(v) = m
                .row_values(r)
                .iter()
                .find(|v| !(**v >= 0.0 && **v <= 1.0 + tol))
            {
                return Err(Error::Validation(format!(
                    "row {r}: entry {v} outside [0, 1]"
                )));
            }
            let s = m.row_sum(r);
            let bad = match self.kind {
                MatrixKind::Full => (s - 1.0).abs() > tol,
                MatrixKind::Restricted => s > 1.0 + tol,
            };
            if bad {
                return Err(Error::Validation(format!(
                    "row {r}: sum {s} violates {:?} row-sum bound",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

/// Sampling settings shared by matrix and cost construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub samples_per_cell: usize,
    pub scheme: SampleScheme,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            samples_per_cell: 10,
            scheme: SampleScheme::UniformSubgrid,
            seed: 0,
        }
    }
}

/// How cell costs are integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostQuadrature {
    /// Mean over the same sample points used for the matrices.
    SampleMean,
    /// Cost at the cell center.
    CellCenter,
}

fn all_samples(partition: &Partition, sampling: &SamplingConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..partition.n_ordinary())
        .into_par_iter()
        .map(|cell| {
            partition.cell_samples(
                cell,
                sampling.samples_per_cell,
                sampling.scheme,
                sampling.seed,
            )
        })
        .collect()
}

/// Full Ulam matrix for one control value and one noise value.
pub fn build_pf_matrix(
    system: &dyn ControlSystem,
    partition: &Partition,
    control: &[f64],
    noise: &[f64],
    sampling: &SamplingConfig,
) -> Result<TransferMatrix> {
    let samples = all_samples(partition, sampling)?;
    pf_matrix_from_samples(system, partition, &samples, control, noise, (0, 0))
}

fn pf_matrix_from_samples(
    system: &dyn ControlSystem,
    partition: &Partition,
    samples: &[Vec<Vec<f64>>],
    control: &[f64],
    noise: &[f64],
    labels: (usize, usize),
) -> Result<TransferMatrix> {
    if system.dim() != partition.dim() {
        return Err(Error::Usage(format!(
            "system dimension {} does not match partition dimension {}",
            system.dim(),
            partition.dim()
        )));
    }
    let n = partition.n_indices();
    let sink = partition.sink_index();
    let attractor = partition.attractor_index();
    let mut rows: Vec<Vec<(usize, f64)>> = samples
        .par_iter()
        .enumerate()
        .map(|(cell, points)| {
            let weight = 1.0 / points.len() as f64;
            let mut hits: Vec<usize> = Vec::with_capacity(points.len());
            let mut next = vec![0.0; partition.dim()];
            for (k, p) in points.iter().enumerate() {
                system.step(p, control, noise, &mut next);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite image at cell {cell}, sample {k}, action {}, noise {}",
                        labels.0, labels.1
                    )));
                }
                hits.push(match partition.locate(&next) {
                    CellIndex::Index(j) => j,
                    CellIndex::Outside => sink,
                });
            }
            hits.sort_unstable();
            let mut row: Vec<(usize, f64)> = Vec::new();
            for j in hits {
                match row.last_mut() {
                    Some((c, count)) if *c == j => *count += 1.0,
                    _ => row.push((j, 1.0)),
                }
            }
            for e in &mut row {
                e.1 *= weight;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    rows.push(vec![(sink, 1.0)]);
    rows.push(vec![(attractor, 1.0)]);
    Ok(TransferMatrix {
        kind: MatrixKind::Full,
        matrix: CsrMatrix::from_rows(n, rows)?,
    })
}

/// Noise-weighted average `sum_l v^l P_l`.
pub fn average_over_noise(
    matrices: &[TransferMatrix],
    noise: &NoiseModel,
) -> Result<TransferMatrix> {
    if matrices.len() != noise.len() {
        return Err(Error::Usage(format!(
            "{} matrices for {} noise values",
            matrices.len(),
            noise.len()
        )));
    }
    let kind = matrices[0].kind;
    if matrices.iter().any(|m| m.kind != kind) {
        return Err(Error::Usage(
            "cannot average full and restricted matrices".into(),
        ));
    }
    let refs: Vec<&CsrMatrix> = matrices.iter().map(|m| &m.matrix).collect();
    if matrices.len() == 1 {
        return Ok(matrices[0].clone());
    }
    Ok(TransferMatrix {
        kind,
        matrix: CsrMatrix::weighted_sum(&refs, noise.probs())?,
    })
}

/// Drops the last (attractor) row and column.
pub fn restrict(full: &TransferMatrix) -> TransferMatrix {
    let n = full.matrix.nrows();
    let keep: Vec<usize> = (0..n - 1).collect();
    TransferMatrix {
        kind: MatrixKind::Restricted,
        matrix: full.matrix.submatrix(&keep),
    }
}

/// Cost vectors `G^a` over the restricted index space (ordinary cells, then
/// the sink with `sink_penalty`).
pub fn build_cost_table(
    cost: &dyn StageCost,
    partition: &Partition,
    controls: &ControlGrid,
    noise: &NoiseModel,
    sampling: &SamplingConfig,
    quadrature: CostQuadrature,
    sink_penalty: f64,
) -> Result<Vec<Vec<f64>>> {
    let samples = match quadrature {
        CostQuadrature::SampleMean => all_samples(partition, sampling)?,
        CostQuadrature::CellCenter => (0..partition.n_ordinary())
            .map(|c| vec![partition.grid_cell_center(partition.grid_of_index(c).unwrap())])
            .collect(),
    };
    cost_table_from_samples(cost, partition, &samples, controls, noise, sink_penalty)
}

fn cost_table_from_samples(
    cost: &dyn StageCost,
    partition: &Partition,
    samples: &[Vec<Vec<f64>>],
    controls: &ControlGrid,
    noise: &NoiseModel,
    sink_penalty: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(sink_penalty >= 0.0) {
        return Err(Error::Config("sink penalty must be nonnegative".into()));
    }
    (0..controls.len())
        .map(|a| {
            let u = controls.get(a);
            let mut g: Vec<f64> = samples
                .par_iter()
                .enumerate()
                .map(|(cell, points)| {
                    let mut total = 0.0;
                    for (xi, &v) in noise.values().iter().zip(noise.probs()) {
                        let mut s = 0.0;
                        for p in points {
                            let c = cost.cost(p, u, xi);
                            if !(c >= 0.0) || !c.is_finite() {
                                return Err(Error::Model(format!(
                                    "stage cost {c} at cell {cell}, action {a}"
                                )));
                            }
                            s += c;
                        }
                        total += v * (s / points.len() as f64);
                    }
                    Ok(total)
                })
                .collect::<Result<_>>()?;
            g.push(sink_penalty);
            debug_assert_eq!(g.len(), partition.restricted_len());
            Ok(g)
        })
        .collect()
}

/// Data provenance recorded with an ensemble.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub grid_hash: String,
    pub samples_per_cell: usize,
    pub scheme: String,
    pub seed: u64,
    pub description: String,
}

/// Noise-averaged transfer matrices, costs and reference mass for every action.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferEnsemble {
    full: Vec<TransferMatrix>,
    restricted: Vec<TransferMatrix>,
    costs: Vec<Vec<f64>>,
    mass: Vec<f64>,
    sink: Option<usize>,
    pub provenance: Provenance,
}

const ROW_TOL: f64 = 1e-12;

impl TransferEnsemble {
    /// Assembles and validates an ensemble from full per-action matrices.
    pub fn from_full(
        full: Vec<TransferMatrix>,
        costs: Vec<Vec<f64>>,
        mass: Vec<f64>,
        sink: Option<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        let restricted = full.iter().map(restrict).collect();
        let e = TransferEnsemble {
            full,
            restricted,
            costs,
            mass,
            sink,
            provenance,
        };
        e.validate()?;
        Ok(e)
    }

    /// Builds an ensemble from restricted (substochastic) matrices; the
    /// attractor column receives the missing row mass.
    pub fn from_restricted(
        restricted: Vec<CsrMatrix>,
        costs: Vec<Vec<f64>>,
        mass: Vec<f64>,
        sink: Option<usize>,
    ) -> Result<Self> {
        let full = restricted
            .iter()
            .map(|p| {
                let n = p.nrows();
                let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
                    .map(|r| {
                        let mut row: Vec<(usize, f64)> = p.row(r).collect();
                        let rest = 1.0 - p.row_sum(r);
                        if rest > 0.0 {
                            row.push((n, rest));
                        }
                        row
                    })
                    .collect();
                rows.push(vec![(n, 1.0)]);
                Ok(TransferMatrix {
                    kind: MatrixKind::Full,
                    matrix: CsrMatrix::from_rows(n + 1, rows)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let restricted: Vec<TransferMatrix> = restricted
            .into_iter()
            .map(|matrix| TransferMatrix {
                kind: MatrixKind::Restricted,
                matrix,
            })
            .collect();
        let e = TransferEnsemble {
            full,
            restricted,
            costs,
            mass,
            sink,
            provenance: Provenance::default(),
        };
        e.validate()?;
        Ok(e)
    }

    pub fn n_actions(&self) -> usize {
        self.full.len()
    }

    /// Size of the restricted index space.
    pub fn restricted_len(&self) -> usize {
        self.mass.len()
    }

    pub fn full(&self, action: usize) -> &TransferMatrix {
        &self.full[action]
    }

    pub fn restricted(&self, action: usize) -> &TransferMatrix {
        &self.restricted[action]
    }

    pub fn restricted_matrices(&self) -> Vec<&CsrMatrix> {
        self.restricted.iter().map(|t| &t.matrix).collect()
    }

    pub fn costs(&self, action: usize) -> &[f64] {
        &self.costs[action]
    }

    pub fn all_costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn sink(&self) -> Option<usize> {
        self.sink
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_actions();
        if m == 0 {
            return Err(Error::Validation("ensemble has no actions".into()));
        }
        let n1 = self.mass.len();
        if self.costs.len() != m || self.restricted.len() != m {
            return Err(Error::Validation("per-action data lengths differ".into()));
        }
        for a in 0..m {
            let full = &self.full[a];
            if full.kind != MatrixKind::Full || full.dim() != n1 + 1 {
                return Err(Error::Validation(format!(
                    "action {a}: full matrix has wrong shape"
                )));
            }
            full.validate(ROW_TOL)
                .map_err(|e| Error::Validation(format!("action {a}: {e}")))?;
            self.restricted[a]
                .validate(ROW_TOL)
                .map_err(|e| Error::Validation(format!("action {a}: {e}")))?;
            let attractor = n1;
            if full.matrix.row_indices(attractor) != [attractor] {
                return Err(Error::Validation(format!(
                    "action {a}: attractor row is not absorbing"
                )));
            }
            if let Some(s) = self.sink {
                if full.matrix.row_indices(s) != [s] {
                    return Err(Error::Validation(format!(
                        "action {a}: sink row {s} is not a self-loop"
                    )));
                }
            }
            if self.costs[a].len() != n1 {
                return Err(Error::Validation(format!(
                    "action {a}: cost vector has length {}",
                    self.costs[a].len()
                )));
            }
            if let Some(j) = self.costs[a]
                .iter()
                .position(|g| !(*g >= 0.0) || !g.is_finite())
            {
                return Err(Error::Validation(format!(
                    "action {a}: cost at cell {j} is negative or non-finite"
                )));
            }
        }
        for (j, &mj) in self.mass.iter().enumerate() {
            let ok = if Some(j) == self.sink {
                mj == 0.0
            } else {
                mj > 0.0 && mj.is_finite()
            };
            if !ok {
                return Err(Error::Validation(format!("mass at index {j} is {mj}")));
            }
        }
        if let Some(s) = self.sink {
            if s >= n1 {
                return Err(Error::Validation(format!("sink index {s} out of range")));
            }
        }
        Ok(())
    }
}

/// Ensemble construction settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub sampling: SamplingConfig,
    pub quadrature: CostQuadrature,
    pub sink_penalty: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            sampling: SamplingConfig::default(),
            quadrature: CostQuadrature::SampleMean,
            sink_penalty: 1e6,
        }
    }
}

/// Builds every `P_{T_a}` (noise-averaged), its restriction, the cost table
/// and the cell-volume mass vector.
pub fn build_ensemble(
    system: &dyn ControlSystem,
    cost: &dyn StageCost,
    partition: &Partition,
    controls: &ControlGrid,
    noise: &NoiseModel,
    config: &EnsembleConfig,
    grid_hash: String,
) -> Result<TransferEnsemble> {
    let samples = all_samples(partition, &config.sampling)?;
    let full = (0..controls.len())
        .map(|a| {
            let per_noise = noise
                .values()
                .iter()
                .enumerate()
                .map(|(l, xi)| {
                    pf_matrix_from_samples(system, partition, &samples, controls.get(a), xi, (a, l))
                })
                .collect::<Result<Vec<_>>>()?;
            average_over_noise(&per_noise, noise)
        })
        .collect::<Result<Vec<_>>>()?;
    let costs = match config.quadrature {
        CostQuadrature::SampleMean => cost_table_from_samples(
            cost,
            partition,
            &samples,
            controls,
            noise,
            config.sink_penalty,
        )?,
        CostQuadrature::CellCenter => build_cost_table(
            cost,
            partition,
            controls,
            noise,
            &config.sampling,
            CostQuadrature::CellCenter,
            config.sink_penalty,
        )?,
    };
    let mut mass = vec![partition.cell_volume(); partition.n_ordinary()];
    mass.push(0.0);
    let provenance = Provenance {
        grid_hash,
        samples_per_cell: config.sampling.samples_per_cell,
        scheme: format!("{:?}", config.sampling.scheme),
        seed: config.sampling.seed,
        description: system.description(),
    };
    TransferEnsemble::from_full(full, costs, mass, Some(partition.sink_index()), provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnCost, FnSystem};
    use crate::partition::AttractorBox;

    fn unit_interval(cells: usize, attractor_center: f64) -> Partition {
        let attractor = AttractorBox {
            center: vec![attractor_center],
            half_widths: vec![0.01],
        };
        Partition::build_grid(&[(0.0, 1.0)], &[cells], &[false], attractor).unwrap()
    }

    fn two_mid_samples() -> SamplingConfig {
        SamplingConfig {
            samples_per_cell: 2,
            scheme: SampleScheme::UniformSubgrid,
            seed: 0,
        }
    }

    #[test]
    fn halving_map_on_two_cells() {
        // 3 cells so that two ordinary cells remain after lumping the third
        let p = unit_interval(3, 0.9);
        let sys = FnSystem::new(1, |x, _u, _xi, out| out[0] = x[0] / 2.0);
        let t = build_pf_matrix(&sys, &p, &[0.0], &[0.0], &two_mid_samples()).unwrap();
        // samples 1/12, 3/12 -> cell 0; 5/12, 7/12 -> 5/24, 7/24 -> cell 0
        assert_eq!(t.matrix.get(0, 0), 1.0);
        assert_eq!(t.matrix.get(1, 0), 1.0);
        assert_eq!(t.matrix.row_sums(), vec![1.0; 4]);
    }

    #[test]
    fn identity_map_gives_identity() {
        let p = unit_interval(5, 0.9);
        let sys = FnSystem::new(1, |x, _u, _xi, out| out[0] = x[0]);
        let t = build_pf_matrix(&sys, &p, &[0.0], &[0.0], &two_mid_samples()).unwrap();
        assert_eq!(t.matrix, CsrMatrix::identity(p.n_indices()));
    }

    #[test]
    fn outside_images_go_to_sink() {
        let p = unit_interval(4, 0.1);
        // right half of each cell's samples leaves the domain
        let sys = FnSystem::new(1, |x, _u, _xi, out| {
            let frac = (x[0] * 4.0).fract();
            out[0] = if frac > 0.5 { 2.0 } else { x[0] };
        });
        let t = build_pf_matrix(&sys, &p, &[0.0], &[0.0], &two_mid_samples()).unwrap();
        for cell in 0..p.n_ordinary() {
            assert_eq!(t.matrix.get(cell, p.sink_index()), 0.5);
        }
    }

    #[test]
    fn non_finite_image_is_reported() {
        let p = unit_interval(4, 0.1);
        let sys = FnSystem::new(1, |_x, _u, _xi, out| out[0] = f64::NAN);
        let err = build_pf_matrix(&sys, &p, &[0.0], &[0.0], &two_mid_samples()).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("cell 0")));
    }

    #[test]
    fn averaging_is_convex() {
        let a = TransferMatrix {
            kind: MatrixKind::Full,
            matrix: CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
        };
        let b = TransferMatrix {
            kind: MatrixKind::Full,
            matrix: CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![0.0, 1.0]]),
        };
        let half = NoiseModel::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let avg = average_over_noise(&[a.clone(), b], &half).unwrap();
        assert_eq!(avg.matrix.to_dense(), vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        let single = average_over_noise(std::slice::from_ref(&a), &NoiseModel::none(1)).unwrap();
        assert_eq!(single, a);
        assert!(average_over_noise(&[a], &half).is_err());
    }

    #[test]
    fn restriction_deletes_attractor_mass() {
        let full = TransferMatrix {
            kind: MatrixKind::Full,
            matrix: CsrMatrix::from_dense(&[
                vec![0.6, 0.0, 0.4],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ]),
        };
        let r = restrict(&full);
        assert_eq!(r.matrix.to_dense(), vec![vec![0.6, 0.0], vec![0.0, 1.0]]);
        assert!((r.matrix.row_sum(0) - 0.6).abs() < 1e-15);
        r.validate(1e-12).unwrap();
        let id = restrict(&TransferMatrix {
            kind: MatrixKind::Full,
            matrix: CsrMatrix::identity(3),
        });
        assert_eq!(id.matrix, CsrMatrix::identity(2));
    }

    #[test]
    fn cost_table_means() {
        let p = unit_interval(4, 0.1);
        let controls = ControlGrid::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let noise = NoiseModel::new(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap();
        let constant = FnCost(|_x: &[f64], _u: &[f64], _xi: &[f64]| 3.0);
        let g = build_cost_table(
            &constant,
            &p,
            &controls,
            &noise,
            &two_mid_samples(),
            CostQuadrature::SampleMean,
            1e6,
        )
        .unwrap();
        for ga in &g {
            assert!(ga[..p.n_ordinary()]
                .iter()
                .all(|&v| (v - 3.0).abs() < 1e-15));
            assert_eq!(ga[p.sink_index()], 1e6);
        }
        let negative = FnCost(|_x: &[f64], _u: &[f64], _xi: &[f64]| -1.0);
        assert!(matches!(
            build_cost_table(
                &negative,
                &p,
                &controls,
                &noise,
                &two_mid_samples(),
                CostQuadrature::SampleMean,
                1e6
            ),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn rejects_bad_restricted_rows() {
        let too_big = CsrMatrix::from_dense(&[vec![0.7, 0.6], vec![0.0, 0.0]]);
        let err = TransferEnsemble::from_restricted(
            vec![too_big],
            vec![vec![1.0, 1.0]],
            vec![1.0, 1.0],
            None,
        );
        assert!(matches!(err, Err(Error::Validation(ref m)) if m.contains("row 0")));
    }
}
