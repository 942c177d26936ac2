//! Run configuration (TOML). Every section has defaults; unknown keys are
//! rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pfstab_core::lp::{Method, SinkMode, Tolerances};
use pfstab_core::models::{
    bernoulli_noise, quantize_uniform_noise, ControlGrid, Integrator, NoiseModel, Pendulum,
    PendulumParams, PendulumUncertainty,
};
use pfstab_core::partition::{AttractorBox, Partition, SampleScheme};
use pfstab_core::transfer::{CostQuadrature, EnsembleConfig, SamplingConfig};
use pfstab_core::verify::NoiseSampling;

use crate::store::fnv1a;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub controls: ControlConfig,
    pub noise: NoiseConfig,
    pub sampling: SamplingSection,
    pub cost: CostConfig,
    pub lp: LpConfig,
    pub verify: VerifyConfig,
    pub seeds: Seeds,
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Pendulum,
}

/// Cart-pendulum parameters. The noise section decides where noise enters:
/// uniform noise is a random damping ratio, erasure noise gates the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dt: f64,
    pub integrator: Integrator,
    pub substeps: usize,
    pub gravity: f64,
    pub length: f64,
    pub pendulum_mass: f64,
    pub cart_mass: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = PendulumParams::default();
        ModelConfig {
            kind: ModelKind::Pendulum,
            dt: 0.1,
            integrator: Integrator::Rk4,
            substeps: 1,
            gravity: p.gravity,
            length: p.length,
            pendulum_mass: p.pendulum_mass,
            cart_mass: p.cart_mass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub bounds: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
    pub wrap: Vec<bool>,
    pub attractor_center: Vec<f64>,
    pub attractor_half_widths: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            bounds: vec![[-PI, PI], [-10.0, 10.0]],
            counts: vec![70, 70],
            wrap: vec![true, false],
            attractor_center: vec![0.0, 0.0],
            attractor_half_widths: vec![0.01, 0.01],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControlConfig {
    /// Scalar controls `min, min + step, ..., max`.
    Range { min: f64, max: f64, step: f64 },
    /// Explicit control vectors, in action order.
    List { values: Vec<Vec<f64>> },
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig::Range {
            min: -80.0,
            max: 80.0,
            step: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// Damping ratio uniform on `[-half_width, half_width]`, quantized to
    /// `levels` equally likely midpoints.
    Uniform {
        half_width: f64,
        levels: usize,
    },
    /// The control input is lost with probability `probability`.
    Erasure {
        probability: f64,
    },
    None,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::Uniform {
            half_width: 0.1,
            levels: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub samples_per_cell: usize,
    pub scheme: SampleScheme,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            samples_per_cell: 10,
            scheme: SampleScheme::UniformSubgrid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `|x|^2 + |u|^2`
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub kind: CostKind,
    pub quadrature: CostQuadrature,
    pub sink_penalty: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            kind: CostKind::Quadratic,
            quadrature: CostQuadrature::SampleMean,
            sink_penalty: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpConfig {
    pub gamma: f64,
    /// Ascending gamma values tried before solving; the configured gamma is
    /// added when missing.
    pub probe: Vec<f64>,
    pub sink: SinkMode,
    pub method: Method,
    pub max_iterations: usize,
    pub tolerances: Tolerances,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig {
            gamma: 1.01,
            probe: vec![1.0, 1.001, 1.005, 1.01, 1.02, 1.05, 1.1],
            sink: SinkMode::OneShot,
            method: Method::Auto,
            max_iterations: 20_000,
            tolerances: Tolerances::default(),
        }
    }
}

impl LpConfig {
    /// Probe list with the configured gamma merged in.
    pub fn probe_gammas(&self) -> Vec<f64> {
        let mut g = self.probe.clone();
        g.push(self.gamma);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalKind {
    Zero,
    /// Saturated discrete LQR of the linearization at the origin.
    Lqr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub inits_per_cell: usize,
    pub horizon: usize,
    pub local: LocalKind,
    pub lqr_q: Vec<f64>,
    pub lqr_r: Vec<f64>,
    pub noise_sampling: NoiseSampling,
    /// Initial states of the exported sample trajectories.
    pub trajectories: Vec<Vec<f64>>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            inits_per_cell: 8,
            horizon: 100,
            local: LocalKind::Lqr,
            lqr_q: vec![1.0, 1.0],
            lqr_r: vec![1.0],
            noise_sampling: NoiseSampling::Quantized,
            trajectories: vec![vec![PI / 2.0, 0.0], vec![-2.0, 3.0]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Sample placement for matrix construction.
    pub sampling: u64,
    /// Initial points and noise during verification.
    pub verify: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            sampling: 0,
            verify: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write PGM heatmaps next to the CSV grids.
    pub images: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("pfstab-out"),
            images: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Runs every check the library would run later, before any work.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let invalid = |e: pfstab_core::Error| ConfigError::Invalid(e.to_string());
        self.partition().map_err(invalid)?;
        self.controls().map_err(invalid)?;
        self.noise_model().map_err(invalid)?;
        if self.grid.bounds.len() != 2 {
            return bad("the pendulum needs a two-dimensional grid".into());
        }
        if !(self.model.dt > 0.0 && self.model.dt.is_finite()) {
            return bad(format!("model.dt must be positive, got {}", self.model.dt));
        }
        if self.model.substeps == 0 {
            return bad("model.substeps must be at least 1".into());
        }
        for (name, v) in [
            ("gravity", self.model.gravity),
            ("length", self.model.length),
            ("pendulum_mass", self.model.pendulum_mass),
            ("cart_mass", self.model.cart_mass),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("model.{name} must be positive, got {v}"));
            }
        }
        if self.controls().map_err(invalid)?.get(0).len() != 1 {
            return bad("the pendulum takes scalar controls".into());
        }
        if self.sampling.samples_per_cell == 0 {
            return bad("sampling.samples_per_cell must be at least 1".into());
        }
        if !(self.cost.sink_penalty >= 0.0 && self.cost.sink_penalty.is_finite()) {
            return bad("cost.sink_penalty must be finite and nonnegative".into());
        }
        let lp = &self.lp;
        if !(lp.gamma > 0.0 && lp.gamma.is_finite()) {
            return bad(format!("lp.gamma must be positive, got {}", lp.gamma));
        }
        if lp.probe.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return bad("lp.probe values must be positive".into());
        }
        if lp.probe.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("lp.probe must be strictly ascending".into());
        }
        let t = &lp.tolerances;
        if [t.feasibility, t.gap, t.slack, t.positivity]
            .iter()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return bad("lp.tolerances must be positive".into());
        }
        let v = &self.verify;
        if v.inits_per_cell == 0 || v.horizon == 0 {
            return bad("verify.inits_per_cell and verify.horizon must be at least 1".into());
        }
        if v.local == LocalKind::Lqr && (v.lqr_q.len() != 2 || v.lqr_r.len() != 1) {
            return bad("verify.lqr_q needs 2 weights and verify.lqr_r 1 weight".into());
        }
        if let NoiseSampling::Continuous { ranges } = &v.noise_sampling {
            if ranges.len() != 1 || ranges.iter().any(|(lo, hi)| !(lo <= hi)) {
                return bad("continuous noise needs one [lo, hi] range".into());
            }
        }
        if v.trajectories.iter().any(|x| x.len() != 2) {
            return bad("verify.trajectories entries must be 2-vectors".into());
        }
        Ok(())
    }

    pub fn partition(&self) -> pfstab_core::Result<Partition> {
        let g = &self.grid;
        let bounds: Vec<(f64, f64)> = g.bounds.iter().map(|b| (b[0], b[1])).collect();
        Partition::build_grid(
            &bounds,
            &g.counts,
            &g.wrap,
            AttractorBox {
                center: g.attractor_center.clone(),
                half_widths: g.attractor_half_widths.clone(),
            },
        )
    }

    pub fn controls(&self) -> pfstab_core::Result<ControlGrid> {
        match &self.controls {
            ControlConfig::Range { min, max, step } => ControlGrid::scalar_range(*min, *max, *step),
            ControlConfig::List { values } => ControlGrid::new(values.clone()),
        }
    }

    pub fn noise_model(&self) -> pfstab_core::Result<NoiseModel> {
        match self.noise {
            NoiseConfig::Uniform { half_width, levels } => {
                quantize_uniform_noise(half_width, levels)
            }
            NoiseConfig::Erasure { probability } => bernoulli_noise(1.0 - probability),
            NoiseConfig::None => Ok(NoiseModel::none(1)),
        }
    }

    pub fn system(&self) -> Pendulum {
        let uncertainty = match self.noise {
            NoiseConfig::Uniform { .. } => PendulumUncertainty::RandomDamping,
            NoiseConfig::Erasure { .. } => PendulumUncertainty::InputGain,
            NoiseConfig::None => PendulumUncertainty::None,
        };
        let m = &self.model;
        Pendulum {
            params: PendulumParams {
                gravity: m.gravity,
                length: m.length,
                pendulum_mass: m.pendulum_mass,
                cart_mass: m.cart_mass,
            },
            dt: m.dt,
            integrator: m.integrator,
            substeps: m.substeps,
            uncertainty,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            sampling: SamplingConfig {
                samples_per_cell: self.sampling.samples_per_cell,
                scheme: self.sampling.scheme,
                seed: self.seeds.sampling,
            },
            quadrature: self.cost.quadrature,
            sink_penalty: self.cost.sink_penalty,
        }
    }

    /// Hash of the grid definition alone.
    pub fn grid_hash(&self) -> String {
        hash_of(&self.grid)
    }

    /// Hash of everything the `build` stage depends on.
    pub fn build_key(&self) -> String {
        hash_of(&(
            &self.model,
            &self.grid,
            &self.controls,
            &self.noise,
            &self.sampling,
            &self.cost,
            self.seeds.sampling,
        ))
    }

    /// Hash of the inputs of `solve`, `extract` and `certify`.
    pub fn solve_key(&self) -> String {
        hash_of(&(self.build_key(), &self.lp))
    }

    /// Hash of the inputs of `verify`.
    pub fn verify_key(&self) -> String {
        hash_of(&(self.solve_key(), &self.verify, self.seeds.verify))
    }
}

fn hash_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration always serializes");
    format!("{:016x}", fnv1a(&json))
}
