//! Controlled stochastic maps, quantized control and noise sets, stage costs,
//! and the inverted pendulum on a cart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of admissible control vectors. The order fixes the
/// minimum-index tie-break used when extracting a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    values: Vec<Vec<f64>>,
}

impl ControlGrid {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("control grid is empty".into()));
        }
        let dim = values[0].len();
        if values
            .iter()
            .any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Config(
                "control values must be finite and share one dimension".into(),
            ));
        }
        for i in 0..values.len() {
            for j in 0..i {
                if values[i] == values[j] {
                    return Err(Error::Config(format!(
                        "duplicate control value {:?}",
                        values[i]
                    )));
                }
            }
        }
        Ok(ControlGrid { values })
    }

    /// Scalar controls `min, min + step, ..., max`.
    pub fn scalar_range(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(max >= min) {
            return Err(Error::Config(format!(
                "bad control range [{min}, {max}] step {step}"
            )));
        }
        let n = ((max - min) / step + 1e-9).floor() as usize + 1;
        Self::new((0..n).map(|k| vec![min + k as f64 * step]).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn get(&self, action: usize) -> &[f64] {
        &self.values[action]
    }
}

/// Finitely supported noise law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    values: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl NoiseModel {
    pub fn new(values: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::Config(
                "noise values and probabilities must be nonempty and equal length".into(),
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config(
                "noise probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-15 {
            return Err(Error::Config(format!(
                "noise probabilities sum to {total}, not 1"
            )));
        }
        Ok(NoiseModel { values, probs })
    }

    /// Deterministic model with a single zero-valued noise of dimension `dim`.
    pub fn none(dim: usize) -> Self {
        NoiseModel {
            values: vec![vec![0.0; dim]],
            probs: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the value selected by a uniform draw `u` in `[0, 1)`.
    pub fn select(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (l, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return l;
            }
        }
        // u landed in the rounding gap above the last partial sum
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Probability-weighted mean of the values.
    pub fn mean(&self) -> Vec<f64> {
        let dim = self.values[0].len();
        let mut m = vec![0.0; dim];
        for (v, &p) in self.values.iter().zip(&self.probs) {
            for d in 0..dim {
                m[d] += p * v[d];
            }
        }
        m
    }
}

/// Midpoints of `levels` equal subintervals of `[-sigma, sigma]`, equal weights.
pub fn quantize_uniform_noise(sigma: f64, levels: usize) -> Result<NoiseModel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "uniform noise half-width must be positive, got {sigma}"
        )));
    }
    if levels == 0 {
        return Err(Error::Config(
            "uniform noise needs at least one level".into(),
        ));
    }
    let width = 2.0 * sigma / levels as f64;
    let values = (0..levels)
        .map(|k| {
            // symmetric construction keeps the mean exactly zero
            let offset = (2.0 * k as f64 + 1.0 - levels as f64) * 0.5 * width;
            vec![offset]
        })
        .collect();
    let probs = uniform_probs(levels);
    NoiseModel::new(values, probs)
}

/// Equal weights summing to one within one ulp: the last weight absorbs the
/// rounding of the others.
fn uniform_probs(levels: usize) -> Vec<f64> {
    let w = 1.0 / levels as f64;
    let mut probs = vec![w; levels];
    let head: f64 = probs[..levels - 1].iter().sum();
    probs[levels - 1] = 1.0 - head;
    probs
}

/// Bernoulli gain on the input channel: value 1 with probability `p`, 0 otherwise.
pub fn bernoulli_noise(p: f64) -> Result<NoiseModel> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "Bernoulli probability must lie in [0, 1], got {p}"
        )));
    }
    NoiseModel::new(vec![vec![1.0], vec![0.0]], vec![p, 1.0 - p])
}

/// One step of a controlled stochastic map `x' = T(x, u, xi)`.
pub trait ControlSystem: Sync {
    fn dim(&self) -> usize;

    /// Writes the successor of `state` into `next`. Must be deterministic.
    fn step(&self, state: &[f64], control: &[f64], noise: &[f64], next: &mut [f64]);

    fn description(&self) -> String {
        String::from("controlled stochastic map")
    }
}

/// Nonnegative stage cost `G(x, u, xi)`.
pub trait StageCost: Sync {
    fn cost(&self, state: &[f64], control: &[f64], noise: &[f64]) -> f64;
}

/// Adapter turning a closure into a [`ControlSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnSystem { dim, f }
    }
}

impl<F> ControlSystem for FnSystem<F>
where
    F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&self, state: &[f64], control: &[f64], noise: &[f64], next: &mut [f64]) {
        (self.f)(state, control, noise, next)
    }
}

/// Adapter turning a closure into a [`StageCost`].
pub struct FnCost<F>(pub F);

impl<F> StageCost for FnCost<F>
where
    F: Fn(&[f64], &[f64], &[f64]) -> f64 + Sync,
{
    fn cost(&self, state: &[f64], control: &[f64], noise: &[f64]) -> f64 {
        (self.0)(state, control, noise)
    }
}

/// `|x|^2 + |u|^2`, independent of the noise.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadraticCost;

impl StageCost for QuadraticCost {
    fn cost(&self, state: &[f64], control: &[f64], _noise: &[f64]) -> f64 {
        state.iter().chain(control).map(|v| v * v).sum()
    }
}

pub fn quadratic_cost(state: &[f64], control: &[f64]) -> f64 {
    QuadraticCost.cost(state, control, &[])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta.
    Rk4,
    ForwardEuler,
}

/// Physical parameters of the cart-pendulum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub gravity: f64,
    pub length: f64,
    pub pendulum_mass: f64,
    pub cart_mass: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            gravity: 9.8,
            length: 0.5,
            pendulum_mass: 2.0,
            cart_mass: 8.0,
        }
    }
}

impl PendulumParams {
    /// Mass ratio `m / (m + M)`.
    pub fn mass_ratio(&self) -> f64 {
        self.pendulum_mass / (self.pendulum_mass + self.cart_mass)
    }

    /// `g / l`.
    pub fn a(&self) -> f64 {
        self.gravity / self.length
    }

    /// Control gain `m_r / (m l)`.
    pub fn b(&self) -> f64 {
        self.mass_ratio() / (self.pendulum_mass * self.length)
    }
}

/// Angular acceleration of the pendulum for the given damping ratio.
pub fn pendulum_acceleration(
    params: &PendulumParams,
    angle: f64,
    rate: f64,
    u: f64,
    zeta: f64,
) -> f64 {
    let mr = params.mass_ratio();
    let a = params.a();
    let b = params.b();
    let (s, c) = angle.sin_cos();
    let num = a * s - 0.5 * mr * rate * rate * (2.0 * angle).sin() - b * c * u;
    let den = 1.33 - mr * c * c;
    num / den - 2.0 * zeta * a.sqrt() * rate
}

/// Advances `(angle, rate)` by `dt` under constant `u` and damping `zeta`.
pub fn pendulum_step(
    params: &PendulumParams,
    state: [f64; 2],
    u: f64,
    zeta: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<[f64; 2]> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Numeric(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !(state[0].is_finite() && state[1].is_finite() && u.is_finite() && zeta.is_finite()) {
        return Err(Error::Numeric("non-finite pendulum input".into()));
    }
    let next = integrate(params, state, u, zeta, dt, integrator);
    if !(next[0].is_finite() && next[1].is_finite()) {
        return Err(Error::Numeric(format!(
            "pendulum step from {state:?} produced {next:?}"
        )));
    }
    Ok(next)
}

fn integrate(
    params: &PendulumParams,
    s: [f64; 2],
    u: f64,
    zeta: f64,
    dt: f64,
    integrator: Integrator,
) -> [f64; 2] {
    let f = |x: [f64; 2]| [x[1], pendulum_acceleration(params, x[0], x[1], u, zeta)];
    match integrator {
        Integrator::ForwardEuler => {
            let k = f(s);
            [s[0] + dt * k[0], s[1] + dt * k[1]]
        }
        Integrator::Rk4 => {
            let k1 = f(s);
            let k2 = f([s[0] + 0.5 * dt * k1[0], s[1] + 0.5 * dt * k1[1]]);
            let k3 = f([s[0] + 0.5 * dt * k2[0], s[1] + 0.5 * dt * k2[1]]);
            let k4 = f([s[0] + dt * k3[0], s[1] + dt * k3[1]]);
            [
                s[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                s[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ]
        }
    }
}

/// Where the scalar noise enters the pendulum dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PendulumUncertainty {
    /// Noise ignored.
    None,
    /// Noise is the damping ratio `zeta`.
    RandomDamping,
    /// Noise multiplies the control input (input-channel erasure).
    InputGain,
}

/// Inverted pendulum on a cart, sampled with a fixed time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    pub params: PendulumParams,
    pub dt: f64,
    pub integrator: Integrator,
    /// Integrator sub-steps per sampling interval.
    pub substeps: usize,
    pub uncertainty: PendulumUncertainty,
}

impl Pendulum {
    pub fn new(dt: f64, uncertainty: PendulumUncertainty) -> Self {
        Pendulum {
            params: PendulumParams::default(),
            dt,
            integrator: Integrator::Rk4,
            substeps: 1,
            uncertainty,
        }
    }
}

impl ControlSystem for Pendulum {
    fn dim(&self) -> usize {
        2
    }

    fn step(&self, state: &[f64], control: &[f64], noise: &[f64], next: &mut [f64]) {
        let u = control[0];
        let xi = noise.first().copied().unwrap_or(0.0);
        let (u, zeta) = match self.uncertainty {
            PendulumUncertainty::None => (u, 0.0),
            PendulumUncertainty::RandomDamping => (u, xi),
            PendulumUncertainty::InputGain => (xi * u, 0.0),
        };
        let n = self.substeps.max(1);
        let h = self.dt / n as f64;
        let mut s = [state[0], state[1]];
        for _ in 0..n {
            s = integrate(&self.params, s, u, zeta, h, self.integrator);
        }
        next[0] = s[0];
        next[1] = s[1];
    }

    fn description(&self) -> String {
        format!(
            "inverted pendulum on a cart, dt={}, {:?}, {} substep(s), uncertainty {:?}",
            self.dt, self.integrator, self.substeps, self.uncertainty
        )
    }
}
