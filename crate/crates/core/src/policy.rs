//! Deterministic feedback extracted from an LP solution, its closed loop and
//! its value.

use serde::{Deserialize, Serialize};

use crate::certificate::{self, LyapunovMeasure};
use crate::error::{Error, Result};
use crate::lp::{LpSolution, Tolerances};
use crate::sparse::{BandedLu, CsrMatrix};
use crate::spectral::reachable_from;

/// One action per ordinary cell over the restricted index space; the sink
/// (if any) carries `None`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<Option<usize>>,
}

impl Policy {
    pub fn from_actions(actions: Vec<usize>, sink: Option<usize>) -> Self {
        let actions = actions
            .into_iter()
            .enumerate()
            .map(|(j, a)| (Some(j) != sink).then_some(a))
            .collect();
        Policy { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action(&self, cell: usize) -> Option<usize> {
        self.actions[cell]
    }

    pub fn sink(&self) -> Option<usize> {
        self.actions.iter().position(Option::is_none)
    }
}

/// Threshold below which occupation entries count as zero.
pub fn positivity_threshold(sol: &LpSolution, tol: &Tolerances) -> f64 {
    tol.positivity * sol.theta.iter().flatten().fold(0.0f64, |m, &t| m.max(t))
}

/// `a(j) = min { a : theta^a_j > tau }` on every non-sink cell.
pub fn extract_policy(sol: &LpSolution, sink: Option<usize>, tau: f64) -> Result<Policy> {
    if !sol.is_optimal() {
        return Err(Error::Usage(format!(
            "cannot extract a policy from a {:?} solution",
            sol.status
        )));
    }
    let n = sol.theta.first().map_or(0, Vec::len);
    let mut actions = Vec::with_capacity(n);
    for j in 0..n {
        if Some(j) == sink {
            actions.push(None);
            continue;
        }
        match sol.theta.iter().position(|t| t[j] > tau) {
            Some(a) => actions.push(Some(a)),
            None => return Err(Error::Degenerate { cell: j }),
        }
    }
    Ok(Policy { actions })
}

/// Cells where more than one action clears `tau`.
pub fn mixed_cells(sol: &LpSolution, tau: f64) -> Vec<usize> {
    let n = sol.theta.first().map_or(0, Vec::len);
    (0..n)
        .filter(|&j| sol.theta.iter().filter(|t| t[j] > tau).count() > 1)
        .collect()
}

/// Row `j` copied from the matrix of action `a(j)`; the sink row keeps its
/// self-loop.
pub fn closed_loop_matrix(policy: &Policy, matrices: &[CsrMatrix]) -> Result<CsrMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Usage("no action matrices".into()))?;
    let n = first.nrows();
    if policy.len() != n {
        return Err(Error::Usage(format!(
            "policy covers {} cells, matrices have {n}",
            policy.len()
        )));
    }
    let rows = (0..n)
        .map(|j| {
            let src = match policy.actions[j] {
                Some(a) => matrices
                    .get(a)
                    .ok_or_else(|| Error::Usage(format!("cell {j}: action {a} out of range")))?,
                None => first,
            };
            Ok(src.row(j).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    CsrMatrix::from_rows(n, rows)
}

/// `(G_u)_j = G^{a(j)}_j`; the sink takes the cheapest action's cost.
pub fn closed_loop_costs(policy: &Policy, costs: &[Vec<f64>]) -> Vec<f64> {
    (0..policy.len())
        .map(|j| match policy.actions[j] {
            Some(a) => costs[a][j],
            None => costs.iter().map(|g| g[j]).fold(f64::INFINITY, f64::min),
        })
        .collect()
}

/// Lyapunov measure of a closed loop; see [`certificate::lyapunov_measure`].
pub fn lyapunov_measure(p: &CsrMatrix, mass: &[f64], gamma: f64) -> Result<LyapunovMeasure> {
    certificate::lyapunov_measure(p, mass, gamma)
}

/// Value of a policy: `V = (I - gamma P_u)^{-1} G_u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub value: Vec<f64>,
    /// Indices never reached from the support of `m`; their entry is 0 and
    /// does not enter `m . V`.
    pub excluded: Vec<usize>,
}

impl PolicyValue {
    pub fn total(&self, mass: &[f64]) -> f64 {
        crate::lp::dot(mass, &self.value)
    }
}

/// Solves for the value of `policy` on the sub-chain reachable from the
/// support of `mass`. Fails when that sub-chain does not contract at `gamma`.
pub fn evaluate_policy(
    policy: &Policy,
    matrices: &[CsrMatrix],
    costs: &[Vec<f64>],
    mass: &[f64],
    gamma: f64,
) -> Result<PolicyValue> {
    let p = closed_loop_matrix(policy, matrices)?;
    let g = closed_loop_costs(policy, costs);
    let n = p.nrows();
    let keep = reachable_from(&p, (0..n).filter(|&j| mass[j] > 0.0));
    let sub = p.submatrix(&keep);
    let lu = BandedLu::factor_shifted(&sub, gamma).map_err(|e| {
        Error::Numeric(format!(
            "policy does not contract at gamma = {gamma} (not certified): {e:?}"
        ))
    })?;
    let g_sub: Vec<f64> = keep.iter().map(|&j| g[j]).collect();
    let v_sub = lu.solve(&g_sub);
    let mut value = vec![0.0; n];
    for (k, &j) in keep.iter().enumerate() {
        value[j] = v_sub[k];
    }
    let mut in_keep = vec![false; n];
    for &j in &keep {
        in_keep[j] = true;
    }
    let excluded = (0..n).filter(|&j| !in_keep[j]).collect();
    Ok(PolicyValue { value, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, SolveStatus};

    fn tiny_matrices() -> Vec<CsrMatrix> {
        vec![
            CsrMatrix::from_dense(&[vec![0.0, 0.5], vec![0.0, 0.0]]),
            CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.0]]),
        ]
    }

    fn solution(theta: Vec<Vec<f64>>) -> LpSolution {
        let n = theta[0].len();
        LpSolution {
            status: SolveStatus::Optimal,
            gamma: 1.0,
            theta,
            value: vec![0.0; n],
            primal_objective: 0.0,
            dual_objective: 0.0,
            equality_residual: 0.0,
            duality_gap: 0.0,
            dual_violation: 0.0,
            iterations: 0,
            method: String::new(),
            diagnostic: None,
        }
    }

    #[test]
    fn min_index_rule_and_threshold() {
        let sol = solution(vec![vec![0.0, 0.3, 1e-12], vec![6.0, 0.7, 4.0]]);
        let tau = 1e-9 * 6.0;
        let p = extract_policy(&sol, None, tau).unwrap();
        assert_eq!(p.actions, vec![Some(1), Some(0), Some(1)]);
        assert_eq!(mixed_cells(&sol, tau), vec![1]);
    }

    #[test]
    fn empty_support_is_degenerate() {
        let sol = solution(vec![vec![1.0, 0.0], vec![0.0, 1e-15]]);
        assert!(matches!(
            extract_policy(&sol, None, 1e-9),
            Err(Error::Degenerate { cell: 1 })
        ));
        // the sink needs no action
        assert!(extract_policy(&sol, Some(1), 1e-9).is_ok());
    }

    #[test]
    fn closed_loop_rows() {
        let mats = tiny_matrices();
        let both = closed_loop_matrix(&Policy::from_actions(vec![1, 1], None), &mats).unwrap();
        assert_eq!(both.to_dense(), vec![vec![0.5, 0.5], vec![0.5, 0.0]]);
        let mixed = closed_loop_matrix(&Policy::from_actions(vec![0, 1], None), &mats).unwrap();
        assert_eq!(mixed.to_dense(), vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        let single =
            closed_loop_matrix(&Policy::from_actions(vec![0, 0], None), &mats[..1]).unwrap();
        assert_eq!(single, mats[0]);
    }

    #[test]
    fn tiny_values() {
        let mats = tiny_matrices();
        let costs = vec![vec![1.0, 1.0], vec![0.2, 0.2]];
        let m = [1.0, 1.0];
        let best = evaluate_policy(
            &Policy::from_actions(vec![1, 1], None),
            &mats,
            &costs,
            &m,
            1.0,
        )
        .unwrap();
        assert!((best.value[0] - 1.2).abs() < 1e-14 && (best.value[1] - 0.8).abs() < 1e-14);
        let worst = evaluate_policy(
            &Policy::from_actions(vec![0, 0], None),
            &mats,
            &costs,
            &m,
            1.0,
        )
        .unwrap();
        assert!((worst.value[0] - 1.5).abs() < 1e-14 && (worst.value[1] - 1.0).abs() < 1e-14);
        assert!(worst.total(&m) > best.total(&m));
        let zero = vec![CsrMatrix::zeros(2, 2)];
        let v = evaluate_policy(
            &Policy::from_actions(vec![0, 0], None),
            &zero,
            &[vec![3.0, 4.0]],
            &m,
            2.0,
        )
        .unwrap();
        assert_eq!(v.value, vec![3.0, 4.0]);
    }

    #[test]
    fn extracted_policy_reproduces_objective() {
        let lp = crate::lp::tests_support::tiny(1.0);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        let tau = positivity_threshold(&sol, &Tolerances::default());
        let pol = extract_policy(&sol, None, tau).unwrap();
        assert_eq!(pol.actions, vec![Some(1), Some(1)]);
        let v = evaluate_policy(&pol, &lp.matrices, &lp.costs, &lp.mass, 1.0).unwrap();
        assert!((v.total(&lp.mass) - sol.primal_objective).abs() < 1e-12);
    }

    #[test]
    fn expanding_policy_is_rejected() {
        let p = vec![CsrMatrix::from_dense(&[vec![0.9]])];
        assert!(evaluate_policy(
            &Policy::from_actions(vec![0], None),
            &p,
            &[vec![1.0]],
            &[1.0],
            1.2
        )
        .is_err());
    }
}
