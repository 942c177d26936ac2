//! The finite stabilization LP over occupation measures and its dual.
//!
//! Primal, one block `theta^a` per action over the restricted index space:
//!
//! ```text
//! min  sum_a G^a . theta^a
//! s.t. gamma * sum_a (P1_a)' theta^a - sum_a theta^a = -m,   theta >= 0
//! ```
//!
//! Dual:
//!
//! ```text
//! max  m . V   s.t.  V <= gamma * P1_a V + G^a   for every action a
//! ```
//!
//! Two solvers sit behind [`solve_lp`]: a policy-basis simplex that pivots
//! whole blocks of columns at once (every basis of this LP with `m > 0` holds
//! exactly one action per cell), and a dense tableau simplex for small or
//! irregular instances.

mod dense_simplex;
mod enumerate;
mod policy_simplex;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use enumerate::{enumerate_policies, Enumeration, PolicyCost, ENUMERATION_LIMIT};

use crate::error::{Error, Result};
use crate::sparse::{norm_inf, CsrMatrix};
use crate::transfer::TransferEnsemble;

pub use dense_simplex::{solve_standard_form, DenseOutcome, StandardFormSolution};

/// An assembled stabilization LP.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilizationLp {
    pub gamma: f64,
    /// Restricted transfer matrix per action.
    pub matrices: Vec<CsrMatrix>,
    /// Cost vector per action.
    pub costs: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    /// Index of the absorbing out-of-domain sink, if any.
    pub sink: Option<usize>,
}

pub fn assemble_lp(ensemble: &TransferEnsemble, gamma: f64) -> Result<StabilizationLp> {
    assemble_lp_with(ensemble, gamma, SinkMode::Absorbing)
}

/// How mass entering the out-of-domain sink is treated by the LP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkMode {
    /// The sink keeps its mass forever; for `gamma >= 1` any policy that
    /// leaks is infeasible.
    #[default]
    Absorbing,
    /// Mass entering the sink pays the sink cost once and is removed.
    OneShot,
}

pub fn assemble_lp_with(
    ensemble: &TransferEnsemble,
    gamma: f64,
    sink_mode: SinkMode,
) -> Result<StabilizationLp> {
    let lp = StabilizationLp {
        gamma,
        matrices: ensemble
            .restricted_matrices()
            .into_iter()
            .cloned()
            .collect(),
        costs: ensemble.all_costs().to_vec(),
        mass: ensemble.mass().to_vec(),
        sink: ensemble.sink(),
    };
    let lp = match sink_mode {
        SinkMode::Absorbing => lp,
        SinkMode::OneShot => lp.with_one_shot_sink(),
    };
    lp.validate()?;
    Ok(lp)
}

impl StabilizationLp {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Usage(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        let n = self.mass.len();
        if self.matrices.is_empty() || self.matrices.len() != self.costs.len() {
            return Err(Error::Usage(
                "need one cost vector per action and at least one action".into(),
            ));
        }
        for (a, (p, g)) in self.matrices.iter().zip(&self.costs).enumerate() {
            if p.nrows() != n || p.ncols() != n || g.len() != n {
                return Err(Error::Usage(format!(
                    "action {a}: shape mismatch against mass vector of length {n}"
                )));
            }
            if let Some(s) = self.sink {
                let self_loop = p.row_indices(s) == [s] && p.get(s, s) == 1.0;
                let one_shot = self.matrices.iter().all(|q| q.row_indices(s).is_empty());
                if !self_loop && !one_shot {
                    return Err(Error::Usage(format!(
                        "action {a}: sink row {s} must be a unit self-loop or empty in every action"
                    )));
                }
            }
        }
        if self.mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Usage(
                "mass vector must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// True when the sink rows are empty: mass entering the sink pays the
    /// sink cost once and then leaves the problem.
    pub fn sink_is_one_shot(&self) -> bool {
        self.sink
            .is_some_and(|s| self.matrices.iter().all(|p| p.row_indices(s).is_empty()))
    }

    /// Copy of this LP whose sink charges its cost once instead of absorbing
    /// mass forever. Keeps the LP feasible for `gamma >= 1` when every
    /// policy leaks; the certificate still sees the absorbing sink.
    pub fn with_one_shot_sink(&self) -> StabilizationLp {
        let mut out = self.clone();
        if let Some(s) = self.sink {
            out.matrices = self
                .matrices
                .iter()
                .map(|p| {
                    let rows = (0..p.nrows())
                        .map(|r| {
                            if r == s {
                                Vec::new()
                            } else {
                                p.row(r).collect()
                            }
                        })
                        .collect();
                    CsrMatrix::from_rows(p.ncols(), rows).expect("same pattern")
                })
                .collect();
        }
        out
    }

    pub fn n_cells(&self) -> usize {
        self.mass.len()
    }

    pub fn n_actions(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_variables(&self) -> usize {
        self.n_actions() * self.n_cells()
    }

    pub fn n_constraints(&self) -> usize {
        self.n_cells()
    }

    /// `gamma sum_a P_a' theta^a - sum_a theta^a + m`
    pub fn constraint_residual(&self, theta: &[Vec<f64>]) -> Vec<f64> {
        let mut r = self.mass.clone();
        for (p, t) in self.matrices.iter().zip(theta) {
            let pt = p.tmul_vec(t);
            for j in 0..r.len() {
                r[j] += self.gamma * pt[j] - t[j];
            }
        }
        r
    }

    pub fn primal_objective(&self, theta: &[Vec<f64>]) -> f64 {
        self.costs.iter().zip(theta).map(|(g, t)| dot(g, t)).sum()
    }

    pub fn dual_objective(&self, value: &[f64]) -> f64 {
        dot(&self.mass, value)
    }

    /// `gamma P_a V + G^a - V` for one action (nonnegative when dual feasible).
    pub fn dual_slack(&self, action: usize, value: &[f64]) -> Vec<f64> {
        let pv = self.matrices[action].mul_vec(value);
        (0..self.n_cells())
            .map(|j| self.gamma * pv[j] + self.costs[action][j] - value[j])
            .collect()
    }

    /// The LP in CPLEX LP text format. Variable `t_<a>_<j>` is the occupation
    /// of cell `j` under action `a`; row `c_<j>` is the balance equation of
    /// cell `j`.
    pub fn to_lp_format(&self) -> String {
        let n = self.n_cells();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "\\ stabilization LP: {} actions, {} cells, gamma = {:e}",
            self.n_actions(),
            n,
            self.gamma
        );
        out.push_str("Minimize\n obj:");
        let mut line_len = 5;
        for (a, g) in self.costs.iter().enumerate() {
            for (j, &c) in g.iter().enumerate() {
                push_term(&mut out, &mut line_len, c, &format!("t_{a}_{j}"));
            }
        }
        out.push_str("\nSubject To\n");
        // column-wise to row-wise: coefficient of theta^a_i in row j is
        // gamma P_a[i][j] - delta_ij
        let transposed: Vec<CsrMatrix> = self.matrices.iter().map(CsrMatrix::transpose).collect();
        for j in 0..n {
            let _ = write!(out, " c_{j}:");
            let mut line_len = 8;
            for (a, pt) in transposed.iter().enumerate() {
                let mut diag_done = false;
                for (i, v) in pt.row(j) {
                    let mut coef = self.gamma * v;
                    if i == j {
                        coef -= 1.0;
                        diag_done = true;
                    }
                    if coef != 0.0 {
                        push_term(&mut out, &mut line_len, coef, &format!("t_{a}_{i}"));
                    }
                }
                if !diag_done {
                    push_term(&mut out, &mut line_len, -1.0, &format!("t_{a}_{j}"));
                }
            }
            let _ = writeln!(out, " = {:.17e}", -self.mass[j]);
        }
        out.push_str("Bounds\n");
        for a in 0..self.n_actions() {
            for j in 0..n {
                let _ = writeln!(out, " t_{a}_{j} >= 0");
            }
        }
        out.push_str("End\n");
        out
    }
}

fn push_term(out: &mut String, line_len: &mut usize, coef: f64, name: &str) {
    let term = if coef < 0.0 {
        format!(" - {:.17e} {name}", -coef)
    } else {
        format!(" + {coef:.17e} {name}")
    };
    if *line_len + term.len() > 240 {
        out.push_str("\n   ");
        *line_len = 3;
    }
    *line_len += term.len();
    out.push_str(&term);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cells from which the attractor is reached with probability one without
/// ever entering the sink, under some policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViableSet {
    /// Per LP index; the sink is never viable.
    pub viable: Vec<bool>,
    /// Cells where every action leaks into the sink.
    pub leak_cells: Vec<usize>,
    /// Cells with leak-free actions that still cannot avoid the sink or
    /// reach the attractor.
    pub trapped_cells: Vec<usize>,
}

impl ViableSet {
    pub fn count(&self) -> usize {
        self.viable.iter().filter(|&&v| v).count()
    }
}

/// Largest set on which the LP is feasible for `gamma = 1`. Independent of
/// `gamma` and of the costs.
pub fn viable_set(lp: &StabilizationLp) -> ViableSet {
    let (viable, leak_cells, trapped_cells) = policy_simplex::viable(lp);
    ViableSet {
        viable,
        leak_cells,
        trapped_cells,
    }
}

/// Solver tolerances. The feasibility tolerance scales with `1 + |m|_inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub feasibility: f64,
    pub gap: f64,
    pub slack: f64,
    /// Positivity threshold relative to the largest occupation entry.
    pub positivity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-9,
            gap: 1e-8,
            slack: 1e-7,
            positivity: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn feasibility_for(&self, mass: &[f64]) -> f64 {
        self.feasibility * (1.0 + norm_inf(mass))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Why an LP is infeasible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityDiagnostic {
    /// Cells where every action sends mass to the sink.
    pub leak_cells: Vec<usize>,
    /// Cells from which no leak-free action sequence reaches the attractor.
    pub trapped_cells: Vec<usize>,
    /// Constraint rows whose residual cannot be driven to zero.
    pub residual_rows: Vec<usize>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: SolveStatus,
    pub gamma: f64,
    /// Occupation measure per action (empty unless optimal).
    pub theta: Vec<Vec<f64>>,
    /// Dual value vector (empty unless optimal).
    pub value: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|gamma sum P'theta - sum theta + m|_inf`
    pub equality_residual: f64,
    /// `|primal - dual|`
    pub duality_gap: f64,
    /// Largest violation of `V <= gamma P_a V + G^a` over all actions.
    pub dual_violation: f64,
    pub iterations: usize,
    pub method: String,
    pub diagnostic: Option<InfeasibilityDiagnostic>,
}

impl LpSolution {
    pub(crate) fn infeasible(
        gamma: f64,
        iterations: usize,
        method: &str,
        diagnostic: InfeasibilityDiagnostic,
    ) -> Self {
        LpSolution {
            status: SolveStatus::Infeasible,
            gamma,
            theta: Vec::new(),
            value: Vec::new(),
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            equality_residual: f64::NAN,
            duality_gap: f64::NAN,
            dual_violation: f64::NAN,
            iterations,
            method: method.to_string(),
            diagnostic: Some(diagnostic),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// `sum_a theta^a`
    pub fn total_occupation(&self) -> Vec<f64> {
        let n = self.value.len();
        let mut s = vec![0.0; n];
        for t in &self.theta {
            for j in 0..n {
                s[j] += t[j];
            }
        }
        s
    }
}

/// Fills in residual, objective and dual-feasibility fields from `theta` and `value`.
pub(crate) fn finish_audit(lp: &StabilizationLp, sol: &mut LpSolution) {
    sol.primal_objective = lp.primal_objective(&sol.theta);
    sol.dual_objective = lp.dual_objective(&sol.value);
    sol.equality_residual = norm_inf(&lp.constraint_residual(&sol.theta));
    sol.duality_gap = (sol.primal_objective - sol.dual_objective).abs();
    sol.dual_violation = (0..lp.n_actions())
        .flat_map(|a| lp.dual_slack(a, &sol.value))
        .fold(0.0, |m: f64, s| m.max(-s));
}

/// Result of checking an optimal solution against the tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub primal_feasible: bool,
    pub dual_feasible: bool,
    pub strong_duality: bool,
    /// Cells without an action that is both tight and active.
    pub slack_failures: Vec<usize>,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.primal_feasible
            && self.dual_feasible
            && self.strong_duality
            && self.slack_failures.is_empty()
    }
}

/// Checks primal/dual feasibility, strong duality and complementary
/// slackness on the cells with positive mass.
pub fn audit(lp: &StabilizationLp, sol: &LpSolution, tol: &Tolerances) -> Audit {
    let feas = tol.feasibility_for(&lp.mass);
    let min_theta = sol
        .theta
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, &v| m.min(v));
    let primal_feasible =
        min_theta >= -feas && norm_inf(&lp.constraint_residual(&sol.theta)) <= feas;
    let slacks: Vec<Vec<f64>> = (0..lp.n_actions())
        .map(|a| lp.dual_slack(a, &sol.value))
        .collect();
    let dual_feasible = slacks.iter().flatten().all(|&s| s >= -feas);
    let p = lp.primal_objective(&sol.theta);
    let d = lp.dual_objective(&sol.value);
    let strong_duality = (p - d).abs() <= tol.gap * (1.0 + p.abs());
    let tau = tol.positivity * sol.theta.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let slack_failures = (0..lp.n_cells())
        .filter(|&j| lp.mass[j] > 0.0)
        .filter(|&j| {
            !(0..lp.n_actions()).any(|a| sol.theta[a][j] > tau && slacks[a][j].abs() <= tol.slack)
        })
        .collect();
    Audit {
        primal_feasible,
        dual_feasible,
        strong_duality,
        slack_failures,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Policy-basis simplex when every non-sink cell has positive mass,
    /// dense simplex otherwise.
    Auto,
    PolicySimplex,
    DenseSimplex,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub method: Method,
    pub tolerances: Tolerances,
    pub max_iterations: usize,
    /// Initial policy (one action per cell) for the policy-basis simplex.
    pub warm_start: Option<Vec<usize>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: Method::Auto,
            tolerances: Tolerances::default(),
            max_iterations: 20_000,
            warm_start: None,
        }
    }
}

/// Largest instance (variables x constraints) accepted by the dense simplex.
pub const DENSE_LIMIT: usize = 4_000_000;

pub fn solve_lp(lp: &StabilizationLp, tol: &Tolerances) -> Result<LpSolution> {
    solve_lp_with(
        lp,
        &SolveOptions {
            tolerances: *tol,
            ..SolveOptions::default()
        },
    )
}

pub fn solve_lp_with(lp: &StabilizationLp, opts: &SolveOptions) -> Result<LpSolution> {
    lp.validate()?;
    let structured = (0..lp.n_cells()).all(|j| Some(j) == lp.sink || lp.mass[j] > 0.0);
    let method = match opts.method {
        Method::Auto if structured => Method::PolicySimplex,
        Method::Auto => Method::DenseSimplex,
        m => m,
    };
    let mut sol = match method {
        Method::PolicySimplex => {
            if !structured {
                return Err(Error::Usage(
                    "policy-basis simplex needs positive mass on every non-sink cell".into(),
                ));
            }
            policy_simplex::solve(lp, opts)?
        }
        _ => dense_simplex::solve_lp_dense(lp, opts)?,
    };
    if sol.is_optimal() {
        finish_audit(lp, &mut sol);
    }
    Ok(sol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub gamma: f64,
    pub feasible: bool,
    pub objective: Option<f64>,
    pub diagnostic: Option<InfeasibilityDiagnostic>,
}

/// Solves the LP for each `gamma` (ascending) and reports feasibility. The
/// optimal policy at one `gamma` warm-starts the next.
pub fn feasibility_probe(
    ensemble: &TransferEnsemble,
    gammas: &[f64],
    sink_mode: SinkMode,
    tol: &Tolerances,
) -> Result<Vec<ProbeOutcome>> {
    if gammas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Usage(
            "feasibility probe needs strictly ascending gamma values".into(),
        ));
    }
    let mut warm: Option<Vec<usize>> = None;
    let mut out = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let lp = assemble_lp_with(ensemble, gamma, sink_mode)?;
        let opts = SolveOptions {
            tolerances: *tol,
            warm_start: warm.clone(),
            ..SolveOptions::default()
        };
        let sol = solve_lp_with(&lp, &opts)?;
        if sol.is_optimal() {
            warm = Some(dominant_actions(&sol));
        }
        out.push(ProbeOutcome {
            gamma,
            feasible: sol.is_optimal(),
            objective: sol.is_optimal().then_some(sol.primal_objective),
            diagnostic: sol.diagnostic.clone(),
        });
    }
    Ok(out)
}

/// Largest gamma in a probe that was feasible.
pub fn largest_feasible(probe: &[ProbeOutcome]) -> Option<f64> {
    probe
        .iter()
        .filter(|p| p.feasible)
        .map(|p| p.gamma)
        .next_back()
}

/// `preferred` when the probe found it feasible, otherwise the largest
/// feasible gamma below it.
pub fn choose_gamma(probe: &[ProbeOutcome], preferred: f64) -> Option<f64> {
    if probe.iter().any(|p| p.feasible && p.gamma == preferred) {
        return Some(preferred);
    }
    probe
        .iter()
        .filter(|p| p.feasible && p.gamma < preferred)
        .map(|p| p.gamma)
        .next_back()
}

/// Per cell, the action carrying the largest occupation (lowest index on ties).
pub(crate) fn dominant_actions(sol: &LpSolution) -> Vec<usize> {
    let n = sol.value.len();
    (0..n)
        .map(|j| {
            let mut best = 0;
            for a in 1..sol.theta.len() {
                if sol.theta[a][j] > sol.theta[best][j] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn tiny(gamma: f64) -> StabilizationLp {
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
}
