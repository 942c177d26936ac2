//! Acceptance checks. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use pfstab::config::RunConfig;
use pfstab::export::{parse_grid_csv, values_from_grid_csv};
use pfstab::pipeline::{
    self, load_ensemble, save_ensemble, CertificateArtifact, PolicyArtifact, SolveArtifact, Summary,
};
use pfstab::store::{self, Stamp};
use pfstab_core::certificate::{neumann_check, verify_stability};
use pfstab_core::lp::{
    audit, enumerate_policies, solve_lp, solve_lp_with, Method, SolveOptions, SolveStatus,
    StabilizationLp, Tolerances,
};
use pfstab_core::models::{ControlGrid, FnSystem, NoiseModel, PendulumParams};
use pfstab_core::partition::{AttractorBox, Partition, SampleScheme};
use pfstab_core::policy::{
    closed_loop_matrix, evaluate_policy, extract_policy, positivity_threshold,
};
use pfstab_core::sparse::CsrMatrix;
use pfstab_core::transfer::{build_pf_matrix, restrict, SamplingConfig, TransferMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROW_TOL: f64 = 1e-12;
const LP_TOL: f64 = 1e-8;
const POLICY_TOL: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-9;
const NEUMANN_TERMS: usize = 200;

fn main() {
    let started = Instant::now();
    let mut failures = 0;
    let mut report = |name: &str, result: Result<String>| match result {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(e) => {
            failures += 1;
            println!("FAIL  {name}: {e:#}");
        }
    };

    report("1 row-stochasticity", row_stochasticity());
    let instances = random_instances();
    report("2 enumeration oracle", oracle_equivalence(&instances));
    let tmp = tempfile::tempdir().expect("temporary directory");
    let runs = pendulum_runs(tmp.path());
    report("3 duality and slackness", duality(&instances, &runs));
    report("4 certificate soundness", certificates(&instances, &runs));
    report("5 pendulum case 1", case1(&runs));
    report("6 erasure ordering", erasure(&runs));
    report("7 manifold structure", manifold(&runs));
    report(
        "8 determinism and persistence",
        determinism(&runs, tmp.path()),
    );

    println!(
        "acceptance: {} of 8 criteria passed in {:.1} s",
        8 - failures,
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fixtures

fn tiny(gamma: f64) -> StabilizationLp {
    StabilizationLp {
        gamma,
        matrices: vec![
            CsrMatrix::from_dense(&[vec![0.0, 0.5], vec![0.0, 0.0]]),
            CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.0]]),
        ],
        costs: vec![vec![1.0, 1.0], vec![0.2, 0.2]],
        mass: vec![1.0, 1.0],
        sink: None,
    }
}

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < 0.6 {
                rng.random::<f64>()
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        let total = if rng.random::<f64>() < 0.3 {
            1.0
        } else {
            rng.random_range(0.2..1.0)
        };
        row.iter_mut().for_each(|v| *v *= total / s);
    }
    row
}

fn random_lp(seed: u64, n: usize, m: usize, gamma: f64) -> StabilizationLp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrices = (0..m)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| random_row(&mut rng, n)).collect();
            CsrMatrix::from_dense(&rows)
        })
        .collect();
    let costs = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..2.0)).collect())
        .collect();
    let mass = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    StabilizationLp {
        gamma,
        matrices,
        costs,
        mass,
        sink: None,
    }
}

/// Fifty random instances with `n <= 4` cells, `m <= 3` actions and
/// `gamma` in `{1, 1.05}`, skipping near-ties on the feasibility boundary.
fn random_instances() -> Vec<StabilizationLp> {
    let mut out = Vec::new();
    let mut seed = 1000u64;
    while out.len() < 50 {
        let n = 1 + (seed % 4) as usize;
        let m = 1 + ((seed / 4) % 3) as usize;
        let gamma = if seed.is_multiple_of(2) { 1.0 } else { 1.05 };
        let lp = random_lp(seed, n, m, gamma);
        if enumerate_policies(&lp).is_ok_and(|e| e.margin() >= 1e-6) {
            out.push(lp);
        }
        seed += 1;
    }
    out
}

// ---------------------------------------------------------------- criterion 1

fn check_rows(m: &TransferMatrix, what: &str) -> Result<()> {
    m.validate(ROW_TOL).with_context(|| what.to_string())?;
    for r in 0..m.dim() {
        let s = m.matrix.row_sum(r);
        ensure!(
            (s - 1.0).abs() <= ROW_TOL,
            "{what}: full row {r} sums to {s}"
        );
    }
    let res = restrict(m);
    for r in 0..res.dim() {
        let s = res.matrix.row_sum(r);
        ensure!(s <= 1.0 + ROW_TOL, "{what}: restricted row {r} sums to {s}");
    }
    Ok(())
}

fn row_stochasticity() -> Result<String> {
    let t = Instant::now();
    let mut checked = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let line = |n: usize| {
        Partition::build_grid(
            &[(-1.0, 1.0)],
            &[n],
            &[false],
            AttractorBox {
                center: vec![0.0],
                half_widths: vec![0.01],
            },
        )
    };
    for k in 0..20 {
        let (a, b, c) = (
            rng.random_range(-2.0..2.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(0.0..0.4),
        );
        let sys = FnSystem::new(1, move |x: &[f64], u: &[f64], xi: &[f64], y: &mut [f64]| {
            y[0] = a * x[0] + b * x[0] * x[0] + u[0] + c * xi[0];
        });
        let part = line(5 + k)?;
        let sampling = SamplingConfig {
            samples_per_cell: 1 + k % 7,
            scheme: SampleScheme::StratifiedRandom,
            seed: k as u64,
        };
        for (u, xi) in [(0.0, 0.0), (0.3, 1.0), (-0.3, -1.0)] {
            check_rows(
                &build_pf_matrix(&sys, &part, &[u], &[xi], &sampling)?,
                &format!("1-D toy {k}"),
            )?;
            checked += 1;
        }
    }
    for k in 0..10 {
        let rot = rng.random_range(0.0..std::f64::consts::PI);
        let scale = rng.random_range(0.5..1.5);
        let sys = FnSystem::new(2, move |x: &[f64], u: &[f64], _: &[f64], y: &mut [f64]| {
            y[0] = scale * (rot.cos() * x[0] - rot.sin() * x[1]);
            y[1] = scale * (rot.sin() * x[0] + rot.cos() * x[1]) + u[0];
        });
        let part = Partition::build_grid(
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[6 + k, 5 + k],
            &[k % 2 == 0, false],
            AttractorBox {
                center: vec![0.0, 0.0],
                half_widths: vec![0.05, 0.05],
            },
        )?;
        let sampling = SamplingConfig {
            samples_per_cell: 9,
            scheme: SampleScheme::UniformSubgrid,
            seed: 0,
        };
        for u in [-0.2, 0.0, 0.2] {
            check_rows(
                &build_pf_matrix(&sys, &part, &[u], &[0.0], &sampling)?,
                &format!("2-D toy {k}"),
            )?;
            checked += 1;
        }
    }
    let toys = checked;

    // every (control, noise level) matrix of the 30 x 30 pendulum
    let mut cfg = RunConfig::default();
    cfg.grid.counts = vec![30, 30];
    let part = cfg.partition()?;
    let controls: ControlGrid = cfg.controls()?;
    let noise: NoiseModel = cfg.noise_model()?;
    let sys = cfg.system();
    let sampling = cfg.ensemble_config().sampling;
    for a in 0..controls.len() {
        for (l, xi) in noise.values().iter().enumerate() {
            check_rows(
                &build_pf_matrix(&sys, &part, controls.get(a), xi, &sampling)?,
                &format!("pendulum a={a} l={l}"),
            )?;
            checked += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "{toys} toy and {} pendulum matrices (30x30) in {secs:.1} s",
        checked - toys
    ))
}

// ---------------------------------------------------------------- criterion 2

fn oracle_equivalence(instances: &[StabilizationLp]) -> Result<String> {
    let lp = tiny(1.0);
    let sol = solve_lp(&lp, &Tolerances::default())?;
    let best = enumerate_policies(&lp)?
        .optimum()
        .context("TINY has no stable policy")?;
    ensure!((best - 2.0).abs() <= LP_TOL, "enumeration minimum {best}");
    ensure!(
        (sol.primal_objective - best).abs() <= LP_TOL,
        "LP {} vs enumeration {best}",
        sol.primal_objective
    );
    ensure!(sol.duality_gap <= LP_TOL, "duality gap {}", sol.duality_gap);
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= LP_TOL);
    ensure!(
        close(&sol.theta[0], &[0.0, 0.0]) && close(&sol.theta[1], &[6.0, 4.0]),
        "theta {:?}",
        sol.theta
    );
    ensure!(close(&sol.value, &[1.2, 0.8]), "V {:?}", sol.value);

    let mut feasible = 0;
    let mut worst: f64 = 0.0;
    for (k, lp) in instances.iter().enumerate() {
        let e = enumerate_policies(lp)?;
        for method in [Method::PolicySimplex, Method::DenseSimplex] {
            let sol = solve_lp_with(
                lp,
                &SolveOptions {
                    method,
                    ..SolveOptions::default()
                },
            )?;
            match e.optimum() {
                Some(best) => {
                    ensure!(sol.is_optimal(), "instance {k} ({method:?}) not solved");
                    let d = (sol.primal_objective - best).abs();
                    worst = worst.max(d);
                    ensure!(
                        d <= LP_TOL * (1.0 + best.abs()),
                        "instance {k} ({method:?}): LP {} vs enumeration {best}",
                        sol.primal_objective
                    );
                }
                None => ensure!(
                    sol.status == SolveStatus::Infeasible,
                    "instance {k} ({method:?}) should be infeasible"
                ),
            }
        }
        feasible += e.optimum().is_some() as usize;
    }
    Ok(format!(
        "TINY optimum 2.0, {feasible}/50 random instances feasible, worst difference {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- pendulum runs

struct Run {
    cfg: RunConfig,
    summary: Summary,
}

impl Run {
    fn dir(&self) -> &Path {
        &self.cfg.output.dir
    }

    fn read<T: serde::de::DeserializeOwned>(&self, file: &str) -> Result<T> {
        Ok(store::read_json(&self.dir().join(file), "test")?)
    }
}

struct Runs {
    case1: Result<Run>,
    e015: Result<Run>,
    e05: Result<Run>,
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(name: &str, out: &Path) -> Result<Run> {
    let mut cfg = RunConfig::load(&configs_dir().join(format!("{name}.toml")))?;
    cfg.output.dir = out.join(name);
    let summary = pipeline::run_all(&cfg).with_context(|| format!("running {name}"))?;
    Ok(Run { cfg, summary })
}

fn pendulum_runs(tmp: &Path) -> Runs {
    Runs {
        case1: run_config("case1", tmp),
        e015: run_config("case2_e015", tmp),
        e05: run_config("case2_e05", tmp),
    }
}

fn all_runs(runs: &Runs) -> Result<[&Run; 3]> {
    let get = |r: &'_ Result<Run>| -> Result<()> {
        r.as_ref().map(|_| ()).map_err(|e| anyhow::anyhow!("{e:#}"))
    };
    get(&runs.case1)?;
    get(&runs.e015)?;
    get(&runs.e05)?;
    Ok([
        runs.case1.as_ref().unwrap(),
        runs.e015.as_ref().unwrap(),
        runs.e05.as_ref().unwrap(),
    ])
}

fn run_of(r: &Result<Run>) -> Result<&Run> {
    r.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))
}

// ---------------------------------------------------------------- criterion 3

/// Strong duality, an active tight action per cell, and the extracted policy
/// reproducing the objective.
fn check_solution(lp: &StabilizationLp, what: &str) -> Result<bool> {
    let tol = Tolerances::default();
    let sol = solve_lp(lp, &tol)?;
    if !sol.is_optimal() {
        return Ok(false);
    }
    let obj = sol.primal_objective;
    let gap = (obj - sol.dual_objective).abs();
    ensure!(
        gap <= LP_TOL * (1.0 + obj.abs()),
        "{what}: duality gap {gap:e}"
    );
    let a = audit(lp, &sol, &tol);
    ensure!(a.passed(), "{what}: audit {a:?}");
    let policy = extract_policy(&sol, lp.sink, positivity_threshold(&sol, &tol))?;
    let v = evaluate_policy(&policy, &lp.matrices, &lp.costs, &lp.mass, lp.gamma)?;
    let rel = (v.total(&lp.mass) - obj).abs() / (1.0 + obj.abs());
    ensure!(rel <= POLICY_TOL, "{what}: policy objective off by {rel:e}");
    Ok(true)
}

fn duality(instances: &[StabilizationLp], runs: &Runs) -> Result<String> {
    let mut solved = 0;
    for gamma in [1.0, 1.2, 1.3] {
        solved += check_solution(&tiny(gamma), &format!("TINY gamma {gamma}"))? as usize;
    }
    for (k, lp) in instances.iter().enumerate() {
        solved += check_solution(lp, &format!("random instance {k}"))? as usize;
    }
    let mut worst: f64 = 0.0;
    for run in all_runs(runs)? {
        let sol: SolveArtifact = run.read(pipeline::SOLUTION)?;
        let pol: PolicyArtifact = run.read(pipeline::POLICY)?;
        let s = &sol.solution;
        let name = run.dir().display();
        let gap = (s.primal_objective - s.dual_objective).abs();
        ensure!(
            gap <= LP_TOL * (1.0 + s.primal_objective.abs()),
            "{name}: duality gap {gap:e}"
        );
        ensure!(sol.audit.passed(), "{name}: audit {:?}", sol.audit);
        ensure!(
            pol.objective_gap <= POLICY_TOL,
            "{name}: policy objective off by {:e}",
            pol.objective_gap
        );
        worst = worst.max(pol.objective_gap);
        solved += 1;
    }
    Ok(format!(
        "{solved} solved instances including 3 pendulum runs, worst pendulum policy gap {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 4

fn check_certificate(p: &CsrMatrix, mass: &[f64], gamma: f64, what: &str) -> Result<bool> {
    let (cert, meas) = verify_stability(p, mass, gamma)?;
    if !cert.is_certified() {
        return Ok(false);
    }
    let mu = meas.context("certified without a measure")?;
    let bound = RESIDUAL_TOL * (1.0 + mass.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    ensure!(
        mu.residual <= bound,
        "{what}: residual {:e} > {bound:e}",
        mu.residual
    );
    ensure!(
        mu.mu.iter().zip(mass).all(|(u, m)| *u >= *m && *m >= 0.0),
        "{what}: mu does not dominate m"
    );
    ensure!(
        cert.spectral_radius < 1.0,
        "{what}: rho {}",
        cert.spectral_radius
    );
    let n = neumann_check(p, mass, gamma, &mu.mu, NEUMANN_TERMS);
    ensure!(
        n.monotone && n.bounded,
        "{what}: Neumann sums not monotone and bounded"
    );
    Ok(true)
}

fn certificates(instances: &[StabilizationLp], runs: &Runs) -> Result<String> {
    let tol = Tolerances::default();
    let mut certified = 0;
    for (k, lp) in std::iter::once(tiny(1.0))
        .chain(instances.iter().cloned())
        .enumerate()
    {
        let sol = solve_lp(&lp, &tol)?;
        if !sol.is_optimal() {
            continue;
        }
        let policy = extract_policy(&sol, lp.sink, positivity_threshold(&sol, &tol))?;
        let p = closed_loop_matrix(&policy, &lp.matrices)?;
        certified += check_certificate(&p, &lp.mass, lp.gamma, &format!("instance {k}"))? as usize;
    }
    let mut radii = Vec::new();
    for run in all_runs(runs)? {
        let c: CertificateArtifact = run.read(pipeline::CERTIFICATE)?;
        let name = run.dir().display();
        if !c.certificate.is_certified() {
            continue;
        }
        let residual = c.residual.context("no residual")?;
        ensure!(
            residual <= c.residual_bound,
            "{name}: residual {residual:e}"
        );
        ensure!(c.mu_dominates_mass, "{name}: mu does not dominate m");
        ensure!(c.certificate.spectral_radius < 1.0, "{name}: rho >= 1");
        let n = c.neumann.context("no Neumann check")?;
        ensure!(
            n.terms == NEUMANN_TERMS && n.monotone && n.bounded,
            "{name}: Neumann sums not monotone and bounded"
        );
        radii.push(format!("{:.3}", c.certificate.spectral_radius));
    }
    ensure!(
        run_of(&runs.case1)?.summary.certified,
        "case 1 closed loop is not certified"
    );
    Ok(format!(
        "{certified} small closed loops and {} pendulum runs certified (rho {})",
        radii.len(),
        radii.join(", ")
    ))
}

// ---------------------------------------------------------------- criteria 5 and 6

fn case1(runs: &Runs) -> Result<String> {
    let s = &run_of(&runs.case1)?.summary;
    ensure!(
        s.attraction_percent >= 90.0,
        "attraction {:.2}% < 90%",
        s.attraction_percent
    );
    Ok(format!(
        "{:?} grid, gamma {}, attraction {:.2}% (escaped {:.2}%, open loop {:.2}%)",
        s.counts, s.gamma, s.attraction_percent, s.escaped_percent, s.open_loop_attraction_percent
    ))
}

fn erasure(runs: &Runs) -> Result<String> {
    let lo = &run_of(&runs.e015)?.summary;
    let hi = &run_of(&runs.e05)?.summary;
    let gap = lo.attraction_percent - hi.attraction_percent;
    let detail = format!(
        "erasure 0.15: {:.2}%, erasure 0.5: {:.2}%, difference {gap:.2} points (gamma {})",
        lo.attraction_percent, hi.attraction_percent, lo.gamma
    );
    ensure!(lo.attraction_percent >= 85.0, "{detail}; need >= 85%");
    ensure!(gap >= 10.0, "{detail}; need >= 10 points");
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 7

/// Mean exported value on the bands `|xdot + lambda x| <= h` (stable) and
/// `|xdot - lambda x| <= h` (unstable) of the linearized open loop, where
/// `h` is one cell height and `|x| <= 1`.
fn manifold(runs: &Runs) -> Result<String> {
    let run = run_of(&runs.case1)?;
    let p = PendulumParams::default();
    let lambda = (p.a() / (4.0 / 3.0 - p.mass_ratio())).sqrt();
    let g = &run.cfg.grid;
    let h = (g.bounds[1][1] - g.bounds[1][0]) / g.counts[1] as f64;
    let text = fs::read_to_string(run.dir().join(pipeline::VALUE_CSV))?;
    let (mut stable, mut unstable) = (Vec::new(), Vec::new());
    for row in parse_grid_csv(&text)? {
        let (Some(_), Some((x, y))) = (row.grid, row.center) else {
            continue;
        };
        if x.abs() > 1.0 {
            continue;
        }
        if (y + lambda * x).abs() <= h {
            stable.push(row.value);
        }
        if (y - lambda * x).abs() <= h {
            unstable.push(row.value);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ensure!(
        stable.len() >= 5 && unstable.len() >= 5,
        "bands too thin ({} / {} cells)",
        stable.len(),
        unstable.len()
    );
    let (ms, mu) = (mean(&stable), mean(&unstable));
    let detail = format!(
        "lambda {lambda:.3}: stable band mean V {ms:.4e} ({} cells), unstable band {mu:.4e} ({} cells)",
        stable.len(),
        unstable.len()
    );
    ensure!(ms < mu, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 8

fn compare_dirs(a: &Path, b: &Path) -> Result<usize> {
    let mut compared = 0;
    for entry in fs::read_dir(a)? {
        let path = entry?.path();
        let name = path.file_name().unwrap().to_owned();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "pfmat" | "csv" | "json" | "pgm" | "txt") {
            continue;
        }
        let other = b.join(&name);
        ensure!(
            fs::read(&path)? == fs::read(&other)?,
            "{} differs between runs",
            name.to_string_lossy()
        );
        compared += 1;
    }
    Ok(compared)
}

fn determinism(runs: &Runs, tmp: &Path) -> Result<String> {
    let first = run_of(&runs.case1)?;
    let second = run_config("case1", &tmp.join("repeat"))?;
    ensure!(first.summary == second.summary, "summaries differ");
    let compared = compare_dirs(first.dir(), second.dir())?;

    // ensemble save/load
    let ens = load_ensemble(first.dir(), None)?;
    let copy = tmp.join("copy");
    let stamp = Stamp {
        stage: "build".into(),
        grid_hash: first.cfg.grid_hash(),
        key: first.cfg.build_key(),
    };
    save_ensemble(&ens, &copy, stamp.clone())?;
    ensure!(
        load_ensemble(&copy, Some(&stamp))? == ens,
        "ensemble changed on reload"
    );
    for a in 0..ens.n_actions() {
        let f = pipeline::matrix_file(a);
        ensure!(
            fs::read(first.dir().join(&f))? == fs::read(copy.join(&f))?,
            "{f} differs after save/load"
        );
    }

    // exported grids carry the exact values
    let sol: SolveArtifact = first.read(pipeline::SOLUTION)?;
    let csv = fs::read_to_string(first.dir().join(pipeline::VALUE_CSV))?;
    ensure!(
        values_from_grid_csv(&csv)? == sol.solution.value,
        "value.csv does not reproduce V exactly"
    );
    let reread: SolveArtifact = store::read_json(&first.dir().join(pipeline::SOLUTION), "solve")?;
    ensure!(reread == sol, "solution JSON round trip");
    ensure!(
        RunConfig::from_toml(&first.cfg.to_toml())? == first.cfg,
        "config round trip"
    );
    Ok(format!(
        "{compared} files byte-identical across runs, {} matrices and value grid round-trip exactly",
        ens.n_actions()
    ))
}
