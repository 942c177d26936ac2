//! Monte-Carlo closed-loop simulation and basin-of-attraction estimates.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ControlGrid, ControlSystem, NoiseModel};
use crate::partition::{AttractorBox, CellIndex, Partition, SampleScheme};
use crate::policy::Policy;
use crate::seed::mix_seed;

/// Stream tag separating initial-point sampling from trajectory noise.
const INIT_STREAM: u64 = 0x1a17;

/// Control applied while the state is inside the attractor region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalController {
    Zero,
    /// `u = clamp(-K x, lower, upper)`
    Linear {
        gain: Vec<Vec<f64>>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl LocalController {
    fn control(&self, state: &[f64], out: &mut [f64]) {
        match self {
            LocalController::Zero => out.fill(0.0),
            LocalController::Linear { gain, lower, upper } => {
                for (i, row) in gain.iter().enumerate() {
                    let u: f64 = -row.iter().zip(state).map(|(k, x)| k * x).sum::<f64>();
                    out[i] = u.clamp(lower[i], upper[i]);
                }
            }
        }
    }
}

/// Discrete-time LQR gain for the linearization of `system` at the origin
/// with zero control and the given nominal noise. Jacobians come from
/// central differences; the Riccati equation is solved by fixed-point
/// iteration.
pub fn lqr_gain(
    system: &dyn ControlSystem,
    control_dim: usize,
    nominal_noise: &[f64],
    q: &[f64],
    r: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = system.dim();
    if q.len() != n || r.len() != control_dim {
        return Err(Error::Usage(
            "LQR weights do not match the state and control dimensions".into(),
        ));
    }
    let h = 1e-6;
    let zero_x = vec![0.0; n];
    let zero_u = vec![0.0; control_dim];
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, control_dim);
    let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let mut x = zero_x.clone();
        x[k] = h;
        system.step(&x, &zero_u, nominal_noise, &mut plus);
        x[k] = -h;
        system.step(&x, &zero_u, nominal_noise, &mut minus);
        for i in 0..n {
            a[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    for k in 0..control_dim {
        let mut u = zero_u.clone();
        u[k] = h;
        system.step(&zero_x, &u, nominal_noise, &mut plus);
        u[k] = -h;
        system.step(&zero_x, &u, nominal_noise, &mut minus);
        for i in 0..n {
            b[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    let qm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(q));
    let rm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(r));
    let mut p = qm.clone();
    for _ in 0..100_000 {
        let s = &rm + b.transpose() * &p * &b;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular Riccati update".into()))?;
        let gain = &s_inv * b.transpose() * &p * &a;
        let next = &qm + a.transpose() * &p * &a - a.transpose() * &p * &b * &gain;
        let diff = (&next - &p).abs().max();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(
                "Riccati iteration diverged; the linearization is not stabilizable".into(),
            ));
        }
        if diff <= 1e-12 * (1.0 + p.abs().max()) {
            return Ok((0..control_dim)
                .map(|i| (0..n).map(|j| gain[(i, j)]).collect())
                .collect());
        }
    }
    Err(Error::Numeric("Riccati iteration did not converge".into()))
}

/// How noise is drawn during simulation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSampling {
    /// From the same quantized law used to build the transfer matrices.
    #[default]
    Quantized,
    /// Independent uniform draws per component over `[lo, hi]`.
    Continuous { ranges: Vec<(f64, f64)> },
}

/// Closed-loop system: dynamics, cell-wise policy, local controller and noise.
pub struct ClosedLoop<'a> {
    pub system: &'a dyn ControlSystem,
    pub partition: &'a Partition,
    pub controls: &'a ControlGrid,
    /// `None` applies zero control everywhere (open loop).
    pub policy: Option<&'a Policy>,
    pub local: &'a LocalController,
    pub noise: &'a NoiseModel,
    pub sampling: &'a NoiseSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `horizon + 1` states unless the run escaped early.
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub escaped: bool,
    /// Final state lies in the attractor region.
    pub attracted: bool,
}

impl ClosedLoop<'_> {
    fn control_dim(&self) -> usize {
        self.controls.get(0).len()
    }

    fn draw_noise(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.sampling {
            NoiseSampling::Quantized => {
                let idx = self.noise.select(rng.random::<f64>());
                self.noise.values()[idx].clone()
            }
            NoiseSampling::Continuous { ranges } => ranges
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        }
    }

    pub fn simulate(&self, x0: &[f64], horizon: usize, seed: u64) -> Result<Trajectory> {
        let p = self.partition;
        if x0.len() != p.dim() {
            return Err(Error::Usage(format!(
                "initial state has dimension {}, expected {}",
                x0.len(),
                p.dim()
            )));
        }
        if horizon == 0 {
            return Err(Error::Usage("horizon must be at least 1".into()));
        }
        let mut x = x0.to_vec();
        p.wrap_point(&mut x);
        if p.locate(&x) == CellIndex::Outside {
            return Err(Error::Usage(format!(
                "initial state {x0:?} lies outside the domain"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traj = Trajectory {
            states: vec![x.clone()],
            controls: Vec::with_capacity(horizon),
            noise: Vec::with_capacity(horizon),
            escaped: false,
            attracted: false,
        };
        let mut u = vec![0.0; self.control_dim()];
        let mut next = vec![0.0; p.dim()];
        for _ in 0..horizon {
            match p.locate(&x) {
                CellIndex::Outside => {
                    traj.escaped = true;
                    break;
                }
                CellIndex::Index(i) if i == p.attractor_index() => self.local.control(&x, &mut u),
                CellIndex::Index(i) => match self.policy.and_then(|pol| pol.action(i)) {
                    Some(a) => u.copy_from_slice(self.controls.get(a)),
                    None => u.fill(0.0),
                },
            }
            let xi = self.draw_noise(&mut rng);
            self.system.step(&x, &u, &xi, &mut next);
            p.wrap_point(&mut next);
            x.copy_from_slice(&next);
            traj.controls.push(u.clone());
            traj.noise.push(xi);
            traj.states.push(x.clone());
            if !x.iter().all(|v| v.is_finite()) || p.locate(&x) == CellIndex::Outside {
                traj.escaped = true;
                break;
            }
        }
        traj.attracted = !traj.escaped && p.is_attractor(&x);
        Ok(traj)
    }

    /// Launches `inits_per_cell` trajectories from stratified points in every
    /// ordinary cell and reports the fraction ending in the attractor.
    pub fn basin_fraction(
        &self,
        inits_per_cell: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<VerificationReport> {
        if inits_per_cell == 0 {
            return Err(Error::Usage("inits_per_cell must be at least 1".into()));
        }
        let p = self.partition;
        let n = p.n_ordinary();
        let init_seed = mix_seed(seed, &[INIT_STREAM]);
        let counts = (0..n)
            .into_par_iter()
            .map(|cell| {
                let points = p.cell_samples(
                    cell,
                    inits_per_cell,
                    SampleScheme::StratifiedRandom,
                    init_seed,
                )?;
                let mut attracted = 0usize;
                let mut escaped = 0usize;
                for (r, x0) in points.iter().enumerate() {
                    let t = self.simulate(x0, horizon, mix_seed(seed, &[cell as u64, r as u64]))?;
                    attracted += t.attracted as usize;
                    escaped += t.escaped as usize;
                }
                Ok((attracted, escaped))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = inits_per_cell as f64;
        let per_cell: Vec<f64> = counts.iter().map(|&(a, _)| a as f64 / k).collect();
        // uniform grid: the cell-volume mass is constant, so the weighted mean is the plain mean
        let overall = per_cell.iter().sum::<f64>() / n as f64;
        let escaped = counts.iter().map(|&(_, e)| e as f64).sum::<f64>() / (k * n as f64);
        Ok(VerificationReport {
            per_cell,
            overall,
            escaped,
            inits_per_cell,
            horizon,
            seed,
            attractor: p.attractor_region().clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Attracted fraction per ordinary cell.
    pub per_cell: Vec<f64>,
    /// Mass-weighted mean of `per_cell`.
    pub overall: f64,
    /// Fraction of trajectories that left the domain.
    pub escaped: f64,
    pub inits_per_cell: usize,
    pub horizon: usize,
    pub seed: u64,
    pub attractor: AttractorBox,
}
