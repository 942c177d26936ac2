//! Stage orchestration: build, solve, extract, certify, verify, report.
//!
//! Each stage reads the artifacts of earlier stages from the output
//! directory, checks their stamps against the current configuration and
//! writes its own artifacts atomically. A failing stage leaves
//! `error_<stage>.json` behind and no partial output.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use pfstab_core::certificate::{
    lyapunov_measure, neumann_check, verify_stability, NeumannCheck, StabilityCertificate,
    RESIDUAL_TOL,
};
use pfstab_core::lp::{
    assemble_lp_with, audit, choose_gamma, feasibility_probe, solve_lp_with, viable_set, Audit,
    LpSolution, ProbeOutcome, SinkMode, SolveOptions, StabilizationLp,
};
use pfstab_core::models::QuadraticCost;
use pfstab_core::policy::{
    closed_loop_matrix, evaluate_policy, extract_policy, mixed_cells, positivity_threshold, Policy,
};
use pfstab_core::seed::mix_seed;
use pfstab_core::sparse::norm_inf;
use pfstab_core::transfer::{
    build_ensemble, MatrixKind, Provenance, TransferEnsemble, TransferMatrix,
};
use pfstab_core::verify::{lqr_gain, ClosedLoop, LocalController, Trajectory, VerificationReport};

use crate::config::{LocalKind, RunConfig};
use crate::export;
use crate::pfmat;
use crate::store::{self, fnv1a, StageError, Stamp, StoreError};

pub const ENSEMBLE: &str = "ensemble.json";
pub const PROBE: &str = "probe.json";
pub const SOLUTION: &str = "solution.json";
pub const POLICY: &str = "policy.json";
pub const CERTIFICATE: &str = "certificate.json";
pub const VERIFICATION: &str = "verification.json";
pub const SUMMARY: &str = "summary.json";

pub const MEASURE_CSV: &str = "lyapunov_measure.csv";
pub const CONTROL_CSV: &str = "control.csv";
pub const VALUE_CSV: &str = "value.csv";
pub const ATTRACTION_CSV: &str = "attraction.csv";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const POLICY_CSV: &str = "policy.csv";

/// Neumann partial sums checked by `certify`.
pub const NEUMANN_TERMS: usize = 200;
/// Stream tag for the exported sample trajectories.
const TRAJECTORY_STREAM: u64 = 0x7a4;

pub fn matrix_file(action: usize) -> String {
    format!("P_{action:03}.pfmat")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Build,
    Solve,
    Extract,
    Certify,
    Verify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Build,
        Stage::Solve,
        Stage::Extract,
        Stage::Certify,
        Stage::Verify,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Build => "build",
            Stage::Solve => "solve",
            Stage::Extract => "extract",
            Stage::Certify => "certify",
            Stage::Verify => "verify",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no probed gamma <= {requested} is feasible: {message}")]
    Infeasible { requested: f64, message: String },
    #[error("LP solution fails its audit: {0}")]
    Audit(String),
}

fn stamp(cfg: &RunConfig, stage: Stage) -> Stamp {
    let key = match stage {
        Stage::Build => cfg.build_key(),
        Stage::Solve | Stage::Extract | Stage::Certify => cfg.solve_key(),
        Stage::Verify | Stage::Report => cfg.verify_key(),
    };
    Stamp {
        stage: stage.name().into(),
        grid_hash: cfg.grid_hash(),
        key,
    }
}

fn out_dir(cfg: &RunConfig) -> &Path {
    &cfg.output.dir
}

/// Runs one stage, recording failures in `error_<stage>.json`.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<()> {
    let dir = out_dir(cfg).to_path_buf();
    let result = match stage {
        Stage::Build => build(cfg),
        Stage::Solve => solve(cfg),
        Stage::Extract => extract(cfg),
        Stage::Certify => certify(cfg),
        Stage::Verify => verify(cfg),
        Stage::Report => report(cfg).map(|_| ()),
    };
    let err_path = store::error_path(&dir, stage.name());
    match &result {
        Ok(()) => {
            if err_path.exists() {
                std::fs::remove_file(&err_path)
                    .with_context(|| format!("removing {}", err_path.display()))?;
            }
        }
        Err(e) => {
            let record = StageError {
                stage: stage.name().into(),
                kind: error_kind(e).into(),
                message: format!("{e:#}"),
            };
            // the original error matters more than a failure to record it
            let _ = store::write_json(&err_path, &record);
        }
    }
    result
}

pub fn run_all(cfg: &RunConfig) -> Result<Summary> {
    for stage in &Stage::ALL[..5] {
        run_stage(cfg, *stage)?;
    }
    run_stage(cfg, Stage::Report)?;
    store::read_json(&out_dir(cfg).join(SUMMARY), "report").map_err(Into::into)
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(s) = e.downcast_ref::<StoreError>() {
        return match s {
            StoreError::Missing { .. } => "missing-artifact",
            StoreError::Stale { .. } => "stale-artifact",
            StoreError::Corrupt { .. } => "corrupt-artifact",
            StoreError::Io { .. } => "io",
        };
    }
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return match p {
            PipelineError::Infeasible { .. } => "infeasible",
            PipelineError::Audit(_) => "audit",
        };
    }
    if let Some(c) = e.downcast_ref::<pfstab_core::Error>() {
        use pfstab_core::Error as E;
        return match c {
            E::Config(_) => "config",
            E::Usage(_) => "usage",
            E::Numeric(_) => "numeric",
            E::Model(_) => "model",
            E::Degenerate { .. } => "degenerate",
            E::Solver { .. } => "solver",
            E::Validation(_) => "validation",
        };
    }
    if e.downcast_ref::<pfmat::PfmatError>().is_some() {
        return "corrupt-artifact";
    }
    "other"
}

/// Reads a JSON artifact and checks its stamp.
fn read_stamped<T: for<'de> Deserialize<'de>>(
    dir: &Path,
    file: &str,
    expected: &Stamp,
    producer: &'static str,
    get: impl Fn(&T) -> &Stamp,
) -> Result<T> {
    let path = dir.join(file);
    let value: T = store::read_json(&path, producer)?;
    expected.check(get(&value), &path, producer)?;
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub file: String,
    /// FNV-1a of the file bytes.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub stamp: Stamp,
    pub n_actions: usize,
    pub restricted_len: usize,
    pub sink: Option<usize>,
    /// Full noise-averaged matrix of each action.
    pub matrices: Vec<MatrixEntry>,
    pub costs: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub provenance: Provenance,
}

pub fn build(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let dir = out_dir(cfg);
    let partition = cfg.partition()?;
    let ens = build_ensemble(
        &cfg.system(),
        &QuadraticCost,
        &partition,
        &cfg.controls()?,
        &cfg.noise_model()?,
        &cfg.ensemble_config(),
        cfg.grid_hash(),
    )?;
    save_ensemble(&ens, dir, stamp(cfg, Stage::Build))
}

pub fn save_ensemble(ens: &TransferEnsemble, dir: &Path, stamp: Stamp) -> Result<()> {
    let mut matrices = Vec::with_capacity(ens.n_actions());
    for a in 0..ens.n_actions() {
        let file = matrix_file(a);
        let text = pfmat::to_string(&ens.full(a).matrix);
        store::write_atomic(&dir.join(&file), text.as_bytes())?;
        matrices.push(MatrixEntry {
            file,
            checksum: format!("{:016x}", fnv1a(text.as_bytes())),
        });
    }
    let manifest = EnsembleManifest {
        stamp,
        n_actions: ens.n_actions(),
        restricted_len: ens.restricted_len(),
        sink: ens.sink(),
        matrices,
        costs: ens.all_costs().to_vec(),
        mass: ens.mass().to_vec(),
        provenance: ens.provenance.clone(),
    };
    store::write_json(&dir.join(ENSEMBLE), &manifest)?;
    Ok(())
}

/// Loads and validates an ensemble; `expected` (when given) must match the
/// manifest stamp.
pub fn load_ensemble(dir: &Path, expected: Option<&Stamp>) -> Result<TransferEnsemble> {
    let path = dir.join(ENSEMBLE);
    let manifest: EnsembleManifest = store::read_json(&path, "build")?;
    if let Some(s) = expected {
        s.check(&manifest.stamp, &path, "build")?;
    }
    if manifest.matrices.len() != manifest.n_actions || manifest.costs.len() != manifest.n_actions {
        return Err(StoreError::Corrupt {
            path,
            message: "action counts disagree".into(),
        }
        .into());
    }
    let full = manifest
        .matrices
        .iter()
        .map(|m| {
            let p = dir.join(&m.file);
            let bytes = store::read_bytes(&p, "build")?;
            let sum = format!("{:016x}", fnv1a(&bytes));
            if sum != m.checksum {
                return Err(StoreError::Corrupt {
                    path: p,
                    message: format!("file hashes to {sum}, manifest says {}", m.checksum),
                }
                .into());
            }
            let text = String::from_utf8(bytes).map_err(|e| StoreError::Corrupt {
                path: p.clone(),
                message: e.to_string(),
            })?;
            let matrix = pfmat::parse(&text).with_context(|| format!("reading {}", p.display()))?;
            Ok(TransferMatrix {
                kind: MatrixKind::Full,
                matrix,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ens = TransferEnsemble::from_full(
        full,
        manifest.costs,
        manifest.mass,
        manifest.sink,
        manifest.provenance,
    )
    .with_context(|| format!("validating {}", path.display()))?;
    Ok(ens)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeArtifact {
    pub stamp: Stamp,
    pub sink_mode: SinkMode,
    pub outcomes: Vec<ProbeOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveArtifact {
    pub stamp: Stamp,
    pub sink_mode: SinkMode,
    pub requested_gamma: f64,
    pub gamma: f64,
    pub solution: LpSolution,
    pub audit: Audit,
}

fn solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        method: cfg.lp.method,
        tolerances: cfg.lp.tolerances,
        max_iterations: cfg.lp.max_iterations,
        warm_start: None,
    }
}

pub fn solve(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let dir = out_dir(cfg);
    let ens = load_ensemble(dir, Some(&stamp(cfg, Stage::Build)))?;
    let requested = cfg.lp.gamma;
    let sink_mode = cfg.lp.sink;
    let outcomes = feasibility_probe(&ens, &cfg.lp.probe_gammas(), sink_mode, &cfg.lp.tolerances)?;
    store::write_json(
        &dir.join(PROBE),
        &ProbeArtifact {
            stamp: stamp(cfg, Stage::Solve),
            sink_mode,
            outcomes: outcomes.clone(),
        },
    )?;
    let Some(gamma) = choose_gamma(&outcomes, requested) else {
        let lp = assemble_lp_with(&ens, requested, sink_mode)?;
        let vs = viable_set(&lp);
        let largest = pfstab_core::lp::largest_feasible(&outcomes);
        let message = format!(
            "{} cells leak under every action and {} more cannot avoid the sink or a trap; \
             largest feasible probed gamma: {}; consider lp.sink = \"one-shot\" or a smaller gamma",
            vs.leak_cells.len(),
            vs.trapped_cells.len(),
            largest.map_or("none".to_string(), |g| g.to_string()),
        );
        return Err(PipelineError::Infeasible { requested, message }.into());
    };
    if gamma != requested {
        eprintln!(
            "gamma = {requested} is infeasible; continuing with the largest feasible probed value {gamma}"
        );
    }
    let lp = assemble_lp_with(&ens, gamma, sink_mode)?;
    let solution = solve_lp_with(&lp, &solve_options(cfg))?;
    if !solution.is_optimal() {
        let msg = solution
            .diagnostic
            .as_ref()
            .map_or(String::new(), |d| d.message.clone());
        return Err(PipelineError::Infeasible {
            requested: gamma,
            message: msg,
        }
        .into());
    }
    let report = audit(&lp, &solution, &cfg.lp.tolerances);
    if !report.passed() {
        return Err(PipelineError::Audit(format!("{report:?}")).into());
    }
    store::write_json(
        &dir.join(SOLUTION),
        &SolveArtifact {
            stamp: stamp(cfg, Stage::Solve),
            sink_mode,
            requested_gamma: requested,
            gamma,
            solution,
            audit: report,
        },
    )?;
    Ok(())
}

fn load_solution(cfg: &RunConfig) -> Result<SolveArtifact> {
    read_stamped(
        out_dir(cfg),
        SOLUTION,
        &stamp(cfg, Stage::Solve),
        "solve",
        |a: &SolveArtifact| &a.stamp,
    )
}

fn load_lp(cfg: &RunConfig, sol: &SolveArtifact) -> Result<StabilizationLp> {
    let ens = load_ensemble(out_dir(cfg), Some(&stamp(cfg, Stage::Build)))?;
    Ok(assemble_lp_with(&ens, sol.gamma, sol.sink_mode)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub stamp: Stamp,
    pub gamma: f64,
    pub tau: f64,
    pub policy: Policy,
    pub mixed_cells: Vec<usize>,
    /// Value of the extracted policy.
    pub policy_value: Vec<f64>,
    pub policy_objective: f64,
    pub lp_objective: f64,
    /// `|m.V_pol - primal| / (1 + |primal|)`
    pub objective_gap: f64,
    /// `|V_pol - V_dual|_inf / (1 + |V_dual|_inf)` over cells reached from `m`.
    pub value_gap: f64,
}

pub fn extract(cfg: &RunConfig) -> Result<()> {
    let sol = load_solution(cfg)?;
    let lp = load_lp(cfg, &sol)?;
    let tau = positivity_threshold(&sol.solution, &cfg.lp.tolerances);
    let policy = extract_policy(&sol.solution, lp.sink, tau)?;
    let value = evaluate_policy(&policy, &lp.matrices, &lp.costs, &lp.mass, sol.gamma)?;
    let policy_objective = value.total(&lp.mass);
    let lp_objective = sol.solution.primal_objective;
    let reached: Vec<usize> = (0..lp.n_cells())
        .filter(|j| !value.excluded.contains(j))
        .collect();
    let dual: Vec<f64> = reached.iter().map(|&j| sol.solution.value[j]).collect();
    let diff: Vec<f64> = reached
        .iter()
        .map(|&j| value.value[j] - sol.solution.value[j])
        .collect();
    let artifact = PolicyArtifact {
        stamp: stamp(cfg, Stage::Extract),
        gamma: sol.gamma,
        tau,
        mixed_cells: mixed_cells(&sol.solution, tau),
        objective_gap: (policy_objective - lp_objective).abs() / (1.0 + lp_objective.abs()),
        value_gap: norm_inf(&diff) / (1.0 + norm_inf(&dual)),
        policy,
        policy_value: value.value,
        policy_objective,
        lp_objective,
    };
    store::write_json(&out_dir(cfg).join(POLICY), &artifact)?;
    Ok(())
}

fn load_policy(cfg: &RunConfig) -> Result<PolicyArtifact> {
    read_stamped(
        out_dir(cfg),
        POLICY,
        &stamp(cfg, Stage::Extract),
        "extract",
        |a: &PolicyArtifact| &a.stamp,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateArtifact {
    pub stamp: Stamp,
    pub gamma: f64,
    pub sink_mode: SinkMode,
    pub certificate: StabilityCertificate,
    pub mu: Option<Vec<f64>>,
    pub residual: Option<f64>,
    /// `RESIDUAL_TOL * (1 + |m|_inf)`
    pub residual_bound: f64,
    /// `mu >= m` entrywise.
    pub mu_dominates_mass: bool,
    pub neumann: Option<NeumannCheck>,
    /// `|mu - sum_a theta^a|_inf / (1 + |mu|_inf)` when the LP support is
    /// one action per cell.
    pub occupation_gap: Option<f64>,
    /// Fraction of the reference mass that ever enters the out-of-domain
    /// sink under the closed loop (chain prediction of escapes).
    pub escape_probability: Option<f64>,
    /// Certificate of the zero-control action, when there is one.
    pub open_loop: Option<StabilityCertificate>,
}

pub fn certify(cfg: &RunConfig) -> Result<()> {
    let sol = load_solution(cfg)?;
    let pol = load_policy(cfg)?;
    let lp = load_lp(cfg, &sol)?;
    let gamma = sol.gamma;
    let p = closed_loop_matrix(&pol.policy, &lp.matrices)?;
    let (certificate, measure) = verify_stability(&p, &lp.mass, gamma)?;
    let residual_bound = RESIDUAL_TOL * (1.0 + norm_inf(&lp.mass));
    let neumann = measure
        .as_ref()
        .map(|m| neumann_check(&p, &lp.mass, gamma, &m.mu, NEUMANN_TERMS));
    let mu_dominates_mass = measure
        .as_ref()
        .is_some_and(|m| m.mu.iter().zip(&lp.mass).all(|(u, v)| u >= v));
    let occupation_gap = match &measure {
        Some(m) if pol.mixed_cells.is_empty() => {
            let occ = sol.solution.total_occupation();
            let d: Vec<f64> = m.mu.iter().zip(&occ).map(|(a, b)| a - b).collect();
            Some(norm_inf(&d) / (1.0 + norm_inf(&m.mu)))
        }
        _ => None,
    };
    let escape_probability = match lp.sink {
        Some(s) if lp.sink_is_one_shot() => lyapunov_measure(&p, &lp.mass, 1.0)
            .ok()
            .map(|m| m.mu[s] / lp.mass.iter().sum::<f64>()),
        Some(_) if certificate.is_certified() => Some(0.0),
        _ => None,
    };
    let controls = cfg.controls()?;
    let open_loop = match controls
        .values()
        .iter()
        .position(|u| u.iter().all(|&x| x == 0.0))
    {
        Some(a) => Some(verify_stability(&lp.matrices[a], &lp.mass, gamma)?.0),
        None => None,
    };
    let artifact = CertificateArtifact {
        stamp: stamp(cfg, Stage::Certify),
        gamma,
        sink_mode: sol.sink_mode,
        certificate,
        residual: measure.as_ref().map(|m| m.residual),
        mu: measure.map(|m| m.mu),
        residual_bound,
        mu_dominates_mass,
        neumann,
        occupation_gap,
        escape_probability,
        open_loop,
    };
    store::write_json(&out_dir(cfg).join(CERTIFICATE), &artifact)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationArtifact {
    pub stamp: Stamp,
    pub local: LocalController,
    pub closed_loop: VerificationReport,
    /// Zero control everywhere.
    pub open_loop: VerificationReport,
    pub trajectories: Vec<Trajectory>,
}

pub fn local_controller(cfg: &RunConfig) -> Result<LocalController> {
    Ok(match cfg.verify.local {
        LocalKind::Zero => LocalController::Zero,
        LocalKind::Lqr => {
            let controls = cfg.controls()?;
            let gain = lqr_gain(
                &cfg.system(),
                1,
                &cfg.noise_model()?.mean(),
                &cfg.verify.lqr_q,
                &cfg.verify.lqr_r,
            )?;
            let us = controls.values().iter().map(|u| u[0]);
            let lower = us.clone().fold(f64::INFINITY, f64::min);
            let upper = us.fold(f64::NEG_INFINITY, f64::max);
            LocalController::Linear {
                gain,
                lower: vec![lower],
                upper: vec![upper],
            }
        }
    })
}

pub fn verify(cfg: &RunConfig) -> Result<()> {
    let pol = load_policy(cfg)?;
    let partition = cfg.partition()?;
    let controls = cfg.controls()?;
    let noise = cfg.noise_model()?;
    let system = cfg.system();
    let local = local_controller(cfg)?;
    let v = &cfg.verify;
    let seed = cfg.seeds.verify;
    let closed = ClosedLoop {
        system: &system,
        partition: &partition,
        controls: &controls,
        policy: Some(&pol.policy),
        local: &local,
        noise: &noise,
        sampling: &v.noise_sampling,
    };
    let closed_loop = closed.basin_fraction(v.inits_per_cell, v.horizon, seed)?;
    let open = ClosedLoop {
        policy: None,
        local: &LocalController::Zero,
        ..closed
    };
    let open_loop = open.basin_fraction(v.inits_per_cell, v.horizon, seed)?;
    let trajectories = v
        .trajectories
        .iter()
        .enumerate()
        .map(|(k, x0)| {
            closed.simulate(
                x0,
                v.horizon,
                mix_seed(seed, &[TRAJECTORY_STREAM, k as u64]),
            )
        })
        .collect::<pfstab_core::Result<Vec<_>>>()?;
    store::write_json(
        &out_dir(cfg).join(VERIFICATION),
        &VerificationArtifact {
            stamp: stamp(cfg, Stage::Verify),
            local,
            closed_loop,
            open_loop,
            trajectories,
        },
    )?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub grid_hash: String,
    pub counts: Vec<usize>,
    pub n_actions: usize,
    pub sink_mode: SinkMode,
    pub requested_gamma: f64,
    pub gamma: f64,
    pub lp_objective: f64,
    pub lp_iterations: usize,
    pub lp_method: String,
    pub duality_gap: f64,
    pub certified: bool,
    pub spectral_radius: f64,
    pub decay_bound: f64,
    pub escape_probability: Option<f64>,
    pub open_loop_certified: Option<bool>,
    /// Percentage of initial conditions ending in the attractor.
    pub attraction_percent: f64,
    pub escaped_percent: f64,
    pub open_loop_attraction_percent: f64,
    pub files: Vec<String>,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "grid {:?}, {} actions, sink {:?}\n",
            self.counts, self.n_actions, self.sink_mode
        );
        s += &format!(
            "gamma {} (requested {}), objective {:.6e}, {} iterations ({}), duality gap {:.2e}\n",
            self.gamma,
            self.requested_gamma,
            self.lp_objective,
            self.lp_iterations,
            self.lp_method,
            self.duality_gap
        );
        s += &format!(
            "certificate: {}, rho(gamma P) = {:.6}, decay bound {:.6}",
            if self.certified {
                "certified"
            } else {
                "not certified"
            },
            self.spectral_radius,
            self.decay_bound
        );
        if let Some(e) = self.escape_probability {
            s += &format!(", escape probability {:.4}", e);
        }
        s += "\n";
        s += &format!(
            "attraction {:.2}% (escaped {:.2}%), open loop {:.2}%\n",
            self.attraction_percent, self.escaped_percent, self.open_loop_attraction_percent
        );
        s
    }
}

pub fn report(cfg: &RunConfig) -> Result<Summary> {
    let dir = out_dir(cfg);
    let sol = load_solution(cfg)?;
    let pol = load_policy(cfg)?;
    let cert: CertificateArtifact = read_stamped(
        dir,
        CERTIFICATE,
        &stamp(cfg, Stage::Certify),
        "certify",
        |a: &CertificateArtifact| &a.stamp,
    )?;
    let ver: VerificationArtifact = read_stamped(
        dir,
        VERIFICATION,
        &stamp(cfg, Stage::Verify),
        "verify",
        |a: &VerificationArtifact| &a.stamp,
    )?;
    let partition = cfg.partition()?;
    let controls = cfg.controls()?;
    let n = partition.n_ordinary();

    let measure = cert
        .mu
        .clone()
        .unwrap_or_else(|| vec![f64::NAN; partition.restricted_len()]);
    let control: Vec<f64> = (0..n)
        .map(|j| {
            pol.policy
                .action(j)
                .map_or(f64::NAN, |a| controls.get(a)[0])
        })
        .collect();
    let grids: [(&str, &[f64], f64, bool); 4] = [
        (MEASURE_CSV, &measure, 0.0, true),
        (CONTROL_CSV, &control, 0.0, false),
        (VALUE_CSV, &sol.solution.value, 0.0, true),
        (ATTRACTION_CSV, &ver.closed_loop.per_cell, 1.0, false),
    ];
    let mut files = Vec::new();
    for (name, values, attractor_value, log) in grids {
        let csv = export::grid_csv(&partition, values, attractor_value)?;
        store::write_atomic(&dir.join(name), csv.as_bytes())?;
        files.push(name.to_string());
        if cfg.output.images && partition.dim() == 2 {
            let shown: Vec<f64> = if log {
                values.iter().map(|v| v.max(0.0).ln_1p()).collect()
            } else {
                values.to_vec()
            };
            let img = export::grid_pgm(&partition, &shown)?;
            let img_name = PathBuf::from(name).with_extension("pgm");
            store::write_atomic(&dir.join(&img_name), &img)?;
            files.push(img_name.display().to_string());
        }
    }
    let policy_csv = export::policy_csv(&partition, &pol.policy, &controls)?;
    store::write_atomic(&dir.join(POLICY_CSV), policy_csv.as_bytes())?;
    files.push(POLICY_CSV.into());
    let traj_csv = export::trajectories_csv(&ver.trajectories);
    store::write_atomic(&dir.join(TRAJECTORIES_CSV), traj_csv.as_bytes())?;
    files.push(TRAJECTORIES_CSV.into());

    let summary = Summary {
        grid_hash: cfg.grid_hash(),
        counts: partition.counts().to_vec(),
        n_actions: controls.len(),
        sink_mode: sol.sink_mode,
        requested_gamma: sol.requested_gamma,
        gamma: sol.gamma,
        lp_objective: sol.solution.primal_objective,
        lp_iterations: sol.solution.iterations,
        lp_method: sol.solution.method.clone(),
        duality_gap: sol.solution.duality_gap,
        certified: cert.certificate.is_certified(),
        spectral_radius: cert.certificate.spectral_radius,
        decay_bound: cert.certificate.decay_bound,
        escape_probability: cert.escape_probability,
        open_loop_certified: cert.open_loop.as_ref().map(|c| c.is_certified()),
        attraction_percent: 100.0 * ver.closed_loop.overall,
        escaped_percent: 100.0 * ver.closed_loop.escaped,
        open_loop_attraction_percent: 100.0 * ver.open_loop.overall,
        files,
    };
    store::write_json(&dir.join(SUMMARY), &summary)?;
    store::write_atomic(&dir.join("summary.txt"), summary.to_text().as_bytes())?;
    Ok(summary)
}
