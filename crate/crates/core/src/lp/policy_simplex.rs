//! Simplex on policy bases.
//!
//! With `m > 0` on every non-sink cell, each basic feasible solution of the
//! stabilization LP carries exactly one positive variable per cell, so a
//! basis is a deterministic policy `pi` and its basic solution is
//! `theta = (I - gamma P_pi')^{-1} m`. A basis is feasible iff
//! `I - gamma P_pi` is a nonsingular M-matrix, which the banded LU detects
//! through its pivot signs. Pivoting switches the action of one or many
//! cells at once; a block switch that loses feasibility is retried on a
//! halved block, down to the single most negative reduced cost, which is an
//! ordinary simplex pivot and always stays feasible.
//!
//! The sink is removed before pivoting. With an absorbing sink and
//! `gamma >= 1` no feasible point can route mass into the sink, so actions
//! that leak are dropped. Otherwise (`gamma < 1`, or a one-shot sink whose
//! row is empty) the sink's value is closed-form and folded into the costs.

use crate::error::{Error, Result};
use crate::sparse::{BandedLu, CsrMatrix};

use super::{InfeasibilityDiagnostic, LpSolution, SolveOptions, SolveStatus, StabilizationLp};

const METHOD: &str = "policy-simplex";
/// Smallest attractor-bound row mass treated as a real exit.
const EXIT_EPS: f64 = 1e-12;

struct Reduced {
    gamma: f64,
    /// Original index of each reduced cell.
    cells: Vec<usize>,
    mats: Vec<CsrMatrix>,
    /// `costs[a][j]`, sink value already folded in when `gamma < 1`.
    costs: Vec<Vec<f64>>,
    /// `leak[a][j]`: probability of entering the sink.
    leak: Vec<Vec<f64>>,
    /// `allowed[j]`: actions usable at cell `j`.
    allowed: Vec<Vec<usize>>,
    mass: Vec<f64>,
    sink_value: f64,
    /// Sink handled through `sink_value` instead of forbidding leaks.
    fold: bool,
    one_shot: bool,
}

impl Reduced {
    /// `strict` forbids every leaking action when `gamma >= 1`, whatever the
    /// sink semantics; it is used for viability.
    fn new(lp: &StabilizationLp, gamma: f64, strict: bool) -> Self {
        let n = lp.n_cells();
        let n_act = lp.n_actions();
        let cells: Vec<usize> = (0..n).filter(|&j| Some(j) != lp.sink).collect();
        let mats: Vec<CsrMatrix> = lp.matrices.iter().map(|p| p.submatrix(&cells)).collect();
        let leak: Vec<Vec<f64>> = lp
            .matrices
            .iter()
            .map(|p| {
                cells
                    .iter()
                    .map(|&j| lp.sink.map_or(0.0, |s| p.get(j, s)))
                    .collect()
            })
            .collect();
        let one_shot = lp.sink_is_one_shot();
        let fold = lp.sink.is_some() && !(strict && gamma >= 1.0) && (one_shot || gamma < 1.0);
        let sink_value = match lp.sink {
            Some(s) if fold => {
                let cheapest = lp.costs.iter().map(|g| g[s]).fold(f64::INFINITY, f64::min);
                if one_shot {
                    cheapest
                } else {
                    cheapest / (1.0 - gamma)
                }
            }
            _ => 0.0,
        };
        let costs: Vec<Vec<f64>> = (0..n_act)
            .map(|a| {
                cells
                    .iter()
                    .enumerate()
                    .map(|(k, &j)| {
                        let folded = if fold && leak[a][k] > 0.0 {
                            gamma * leak[a][k] * sink_value
                        } else {
                            0.0
                        };
                        lp.costs[a][j] + folded
                    })
                    .collect()
            })
            .collect();
        let allowed = (0..cells.len())
            .map(|k| (0..n_act).filter(|&a| fold || leak[a][k] == 0.0).collect())
            .collect();
        let mass = cells.iter().map(|&j| lp.mass[j]).collect();
        Reduced {
            gamma,
            cells,
            mats,
            costs,
            leak,
            allowed,
            mass,
            sink_value,
            fold,
            one_shot,
        }
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    fn n_actions(&self) -> usize {
        self.mats.len()
    }

    /// Mass leaving the reduced space: into the attractor, and into the
    /// sink when the sink is folded.
    fn exit_mass(&self, a: usize, j: usize) -> f64 {
        let out = 1.0 - self.mats[a].row_sum(j);
        if self.fold {
            out
        } else {
            out - self.leak[a][j]
        }
    }

    /// Closed-loop matrix; `None` entries are artificial exits (empty rows).
    fn closed_loop(&self, policy: &[Option<usize>]) -> CsrMatrix {
        let rows = policy
            .iter()
            .enumerate()
            .map(|(j, a)| match a {
                Some(a) => self.mats[*a].row(j).collect(),
                None => Vec::new(),
            })
            .collect();
        CsrMatrix::from_rows(self.len(), rows).expect("reduced rows are in range")
    }
}

/// A factored feasible basis with its primal and dual solutions.
struct Basis {
    value: Vec<f64>,
    theta: Vec<f64>,
}

/// Phase 1 prices every real action at zero and the artificial exit at one.
#[derive(Clone, Copy, PartialEq)]
enum Phase {
    One,
    Two,
}

fn policy_cost(red: &Reduced, phase: Phase, action: Option<usize>, j: usize) -> f64 {
    match (phase, action) {
        (Phase::Two, Some(a)) => red.costs[a][j],
        (Phase::One, Some(_)) => 0.0,
        (_, None) => 1.0,
    }
}

fn evaluate(red: &Reduced, phase: Phase, policy: &[Option<usize>]) -> Option<Basis> {
    let p = red.closed_loop(policy);
    let lu = BandedLu::factor_shifted(&p, red.gamma).ok()?;
    let g: Vec<f64> = (0..red.len())
        .map(|j| policy_cost(red, phase, policy[j], j))
        .collect();
    let value = lu.solve(&g);
    let theta = lu.solve_transpose(&red.mass);
    // The inverse of a nonsingular M-matrix is nonnegative; anything else
    // means the pivots were positive only through rounding.
    let scale = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if theta.iter().chain(&value).any(|v| !v.is_finite())
        || theta.iter().any(|&t| t < -1e-9 * scale)
    {
        return None;
    }
    Some(Basis { value, theta })
}

/// Best action per cell against `value`, and its reduced cost (negative
/// means improving). Ties keep the current action, then the lowest index.
fn price(
    red: &Reduced,
    phase: Phase,
    policy: &[Option<usize>],
    value: &[f64],
) -> Vec<(Option<usize>, f64)> {
    (0..red.len())
        .map(|j| {
            let q = |a: Option<usize>| -> f64 {
                let future = match a {
                    Some(a) => red.mats[a].row(j).map(|(i, p)| p * value[i]).sum::<f64>(),
                    None => 0.0,
                };
                policy_cost(red, phase, a, j) + red.gamma * future
            };
            let current = q(policy[j]);
            let tol = 1e-12 * (1.0 + value[j].abs());
            let mut best = (policy[j], current);
            for &a in &red.allowed[j] {
                let qa = q(Some(a));
                if qa < best.1 - tol {
                    best = (Some(a), qa);
                }
            }
            (best.0, best.1 - current)
        })
        .collect()
}

/// Policy iteration with block pivots. Returns the final basis and the
/// number of accepted pivots.
fn iterate(
    red: &Reduced,
    phase: Phase,
    policy: &mut [Option<usize>],
    mut basis: Basis,
    budget: usize,
) -> Result<(Basis, usize)> {
    let mut pivots = 0;
    loop {
        let priced = price(red, phase, policy, &basis.value);
        let mut improving: Vec<(usize, f64)> = priced
            .iter()
            .enumerate()
            .filter(|(j, (a, _))| *a != policy[*j])
            .map(|(j, &(_, r))| (j, r))
            .collect();
        if improving.is_empty() {
            return Ok((basis, pivots));
        }
        if pivots >= budget {
            return Err(Error::Solver {
                iterations: pivots,
                message: "iteration limit reached".into(),
            });
        }
        improving.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        let mut block = improving.len();
        loop {
            let mut candidate = policy.to_vec();
            for &(j, _) in &improving[..block] {
                candidate[j] = priced[j].0;
            }
            if let Some(next) = evaluate(red, phase, &candidate) {
                policy.copy_from_slice(&candidate);
                basis = next;
                pivots += 1;
                break;
            }
            if block == 1 {
                return Err(Error::Solver {
                    iterations: pivots,
                    message: format!(
                        "single pivot at cell {} lost feasibility",
                        red.cells[improving[0].0]
                    ),
                });
            }
            block /= 2;
        }
    }
}

/// Backward reachability over leak-free actions. Returns the cells from
/// which the attractor is reached with probability one without entering the
/// sink, and for each of them an action doing so; following those actions
/// everywhere gives a proper policy on the live set.
fn reach_avoid(red: &Reduced) -> (Vec<bool>, Vec<Option<usize>>) {
    let n = red.len();
    let mut alive = vec![true; n];
    loop {
        let usable = |j: usize, a: usize, alive: &[bool]| {
            red.mats[a].row_indices(j).iter().all(|&i| alive[i])
        };
        let mut choice: Vec<Option<usize>> = vec![None; n];
        let mut labelled = vec![false; n];
        let mut changed = true;
        while changed {
            changed = false;
            for j in 0..n {
                if labelled[j] || !alive[j] {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for &a in &red.allowed[j] {
                    if !usable(j, a, &alive) {
                        continue;
                    }
                    let exit = red.exit_mass(a, j);
                    let onward: f64 = red.mats[a]
                        .row(j)
                        .filter(|&(i, _)| labelled[i])
                        .map(|(_, p)| p)
                        .sum();
                    let progress = if exit > EXIT_EPS { exit } else { 0.0 } + onward;
                    if progress > 0.0 && best.is_none_or(|(_, b)| progress > b) {
                        best = Some((a, progress));
                    }
                }
                if let Some((a, _)) = best {
                    choice[j] = Some(a);
                    labelled[j] = true;
                    changed = true;
                }
            }
        }
        let dead: Vec<usize> = (0..n).filter(|&j| alive[j] && !labelled[j]).collect();
        if dead.is_empty() {
            return (alive, choice);
        }
        for j in dead {
            alive[j] = false;
        }
    }
}

/// Viability of every LP index (the sink is never viable).
pub(super) fn viable(lp: &StabilizationLp) -> (Vec<bool>, Vec<usize>, Vec<usize>) {
    let red = Reduced::new(lp, 1.0, true);
    let (alive, _) = reach_avoid(&red);
    let mut viable = vec![false; lp.n_cells()];
    let mut leak = Vec::new();
    let mut trapped = Vec::new();
    for (k, &j) in red.cells.iter().enumerate() {
        viable[j] = alive[k];
        if red.allowed[k].is_empty() {
            leak.push(j);
        } else if !alive[k] {
            trapped.push(j);
        }
    }
    (viable, leak, trapped)
}

pub(super) fn solve(lp: &StabilizationLp, opts: &SolveOptions) -> Result<LpSolution> {
    let red = Reduced::new(lp, lp.gamma, false);
    let n = red.len();
    let gamma = lp.gamma;
    let to_orig = |v: &[usize]| v.iter().map(|&k| red.cells[k]).collect::<Vec<_>>();

    let no_action: Vec<usize> = (0..n).filter(|&j| red.allowed[j].is_empty()).collect();
    if !no_action.is_empty() {
        let leak_cells = to_orig(&no_action);
        let message = format!(
            "{} cells leak to the sink under every action",
            leak_cells.len()
        );
        let diag = InfeasibilityDiagnostic {
            leak_cells,
            message,
            ..Default::default()
        };
        return Ok(LpSolution::infeasible(gamma, 0, METHOD, diag));
    }

    let warm: Option<Vec<Option<usize>>> = opts.warm_start.as_ref().and_then(|w| {
        if w.len() != lp.n_cells() {
            return None;
        }
        let p: Vec<usize> = red.cells.iter().map(|&j| w[j]).collect();
        p.iter()
            .enumerate()
            .all(|(j, a)| red.allowed[j].contains(a))
            .then(|| p.into_iter().map(Some).collect())
    });

    let mut start: Option<(Vec<Option<usize>>, Basis)> = None;
    if let Some(p) = warm {
        start = evaluate(&red, Phase::Two, &p).map(|b| (p, b));
    }
    if start.is_none() {
        let initial: Vec<usize> = if gamma < 1.0 {
            (0..n)
                .map(|j| {
                    let mut best = 0;
                    for a in 1..red.n_actions() {
                        if red.costs[a][j] < red.costs[best][j] {
                            best = a;
                        }
                    }
                    best
                })
                .collect()
        } else {
            let (alive, choice) = reach_avoid(&red);
            if alive.iter().all(|&x| x) {
                choice
                    .into_iter()
                    .map(|c| c.expect("live cells carry an action"))
                    .collect()
            } else {
                let leak: Vec<usize> = (0..n).filter(|&j| red.allowed[j].is_empty()).collect();
                let trapped: Vec<usize> = (0..n)
                    .filter(|&j| !alive[j] && !red.allowed[j].is_empty())
                    .collect();
                let message = format!(
                    "{} cells cannot reach the attractor without entering the sink or a trap",
                    leak.len() + trapped.len()
                );
                let diag = InfeasibilityDiagnostic {
                    leak_cells: to_orig(&leak),
                    trapped_cells: to_orig(&trapped),
                    message,
                    ..Default::default()
                };
                return Ok(LpSolution::infeasible(gamma, 0, METHOD, diag));
            }
        };
        let p: Vec<Option<usize>> = initial.into_iter().map(Some).collect();
        start = evaluate(&red, Phase::Two, &p).map(|b| (p, b));
    }

    let mut iterations = 0;
    let (mut policy, basis) = match start {
        Some(s) => s,
        None => {
            // Phase 1 from the all-artificial basis.
            let mut p: Vec<Option<usize>> = vec![None; n];
            let b =
                evaluate(&red, Phase::One, &p).expect("the empty closed loop is always feasible");
            let (b1, it) = iterate(&red, Phase::One, &mut p, b, opts.max_iterations)?;
            iterations += it;
            let artificial: Vec<usize> = (0..n).filter(|&j| p[j].is_none()).collect();
            if !artificial.is_empty() {
                let rows = to_orig(&artificial);
                let phase_one: f64 = super::dot(&red.mass, &b1.value);
                let diag = InfeasibilityDiagnostic {
                    message: format!(
                        "no policy contracts at gamma = {gamma}; {} rows keep artificial mass (phase-1 objective {phase_one:.3e})",
                        rows.len()
                    ),
                    residual_rows: rows,
                    ..Default::default()
                };
                return Ok(LpSolution::infeasible(gamma, iterations, METHOD, diag));
            }
            let b2 = evaluate(&red, Phase::Two, &p).ok_or_else(|| Error::Solver {
                iterations,
                message: "phase-1 policy failed to re-factor".into(),
            })?;
            (p, b2)
        }
    };

    let (basis, it) = iterate(
        &red,
        Phase::Two,
        &mut policy,
        basis,
        opts.max_iterations.saturating_sub(iterations),
    )?;
    iterations += it;
    let policy: Vec<usize> = policy
        .into_iter()
        .map(|a| a.expect("phase 2 has no artificial actions"))
        .collect();
    Ok(expand(lp, &red, &policy, &basis, iterations))
}

/// Maps the reduced basic solution back to the full index space.
fn expand(
    lp: &StabilizationLp,
    red: &Reduced,
    policy: &[usize],
    basis: &Basis,
    iterations: usize,
) -> LpSolution {
    let n = lp.n_cells();
    let gamma = lp.gamma;
    let mut theta = vec![vec![0.0; n]; lp.n_actions()];
    let mut value = vec![0.0; n];
    for (k, &j) in red.cells.iter().enumerate() {
        theta[policy[k]][j] = basis.theta[k].max(0.0);
        value[j] = basis.value[k];
    }
    if let Some(s) = lp.sink {
        if red.fold {
            let inflow: f64 = (0..red.len())
                .map(|k| basis.theta[k].max(0.0) * red.leak[policy[k]][k])
                .sum();
            let mut best = 0;
            for a in 1..lp.n_actions() {
                if lp.costs[a][s] < lp.costs[best][s] {
                    best = a;
                }
            }
            theta[best][s] = if red.one_shot {
                gamma * inflow
            } else {
                gamma * inflow / (1.0 - gamma)
            };
            value[s] = red.sink_value;
        } else {
            // Smallest nonnegative sink value keeping every leaking
            // action's dual constraint satisfied.
            let mut vs: f64 = 0.0;
            for a in 0..lp.n_actions() {
                for k in 0..red.len() {
                    let leak = red.leak[a][k];
                    if leak > 0.0 {
                        let pv: f64 = red.mats[a].row(k).map(|(i, p)| p * basis.value[i]).sum();
                        let need = (basis.value[k] - red.costs[a][k] - gamma * pv) / (gamma * leak);
                        vs = vs.max(need);
                    }
                }
            }
            value[s] = vs;
        }
    }
    LpSolution {
        status: SolveStatus::Optimal,
        gamma,
        theta,
        value,
        primal_objective: 0.0,
        dual_objective: 0.0,
        equality_residual: 0.0,
        duality_gap: 0.0,
        dual_violation: 0.0,
        iterations,
        method: METHOD.to_string(),
        diagnostic: None,
    }
}
