//! Brute-force reference: every deterministic policy, evaluated densely.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::StabilizationLp;

/// Largest number of policies [`enumerate_policies`] will visit.
pub const ENUMERATION_LIMIT: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCost {
    pub actions: Vec<usize>,
    /// `rho(gamma P_u)` from the dense eigenvalues.
    pub spectral_radius: f64,
    /// `G_u . (I - gamma P_u')^{-1} m`, when `spectral_radius < 1`.
    pub cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub policies: Vec<PolicyCost>,
    /// Index into `policies` of the cheapest contracting policy.
    pub best: Option<usize>,
}

impl Enumeration {
    pub fn optimum(&self) -> Option<f64> {
        self.best.and_then(|b| self.policies[b].cost)
    }

    /// Distance of the closest policy spectral radius to 1; small values make
    /// feasibility numerically ambiguous.
    pub fn margin(&self) -> f64 {
        self.policies
            .iter()
            .map(|p| (p.spectral_radius - 1.0).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates all `M^(N-1)` policies of an LP without a sink. The sink
/// action is irrelevant, so LPs with a sink are rejected.
pub fn enumerate_policies(lp: &StabilizationLp) -> Result<Enumeration> {
    lp.validate()?;
    if lp.sink.is_some() {
        return Err(Error::Usage(
            "enumeration needs an LP without a sink".into(),
        ));
    }
    let n = lp.n_cells();
    let m = lp.n_actions();
    let total = (m as f64).powi(n as i32);
    if total > ENUMERATION_LIMIT as f64 {
        return Err(Error::Usage(format!(
            "{total} policies exceed the enumeration limit"
        )));
    }
    let dense: Vec<DMatrix<f64>> = lp
        .matrices
        .iter()
        .map(|p| DMatrix::from_fn(n, n, |i, j| p.get(i, j)))
        .collect();
    let mass = DVector::from_column_slice(&lp.mass);
    let mut policies = Vec::with_capacity(total as usize);
    let mut best: Option<usize> = None;
    let mut actions = vec![0usize; n];
    loop {
        let a = DMatrix::from_fn(n, n, |i, j| lp.gamma * dense[actions[i]][(i, j)]);
        let radius = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let cost = if radius < 1.0 {
            let lhs = DMatrix::identity(n, n) - a.transpose();
            lhs.lu().solve(&mass).map(|theta| {
                (0..n)
                    .map(|j| lp.costs[actions[j]][j] * theta[j])
                    .sum::<f64>()
            })
        } else {
            None
        };
        if let Some(c) = cost {
            if best.is_none_or(|b: usize| c < policies_cost(&policies, b)) {
                best = Some(policies.len());
            }
        }
        policies.push(PolicyCost {
            actions: actions.clone(),
            spectral_radius: radius,
            cost,
        });
        // odometer over action tuples, first cell fastest
        let mut k = 0;
        while k < n {
            actions[k] += 1;
            if actions[k] < m {
                break;
            }
            actions[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    Ok(Enumeration { policies, best })
}

fn policies_cost(policies: &[PolicyCost], i: usize) -> f64 {
    policies[i].cost.unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::tests_support::tiny;

    #[test]
    fn tiny_policy_costs() {
        let e = enumerate_policies(&tiny(1.0)).unwrap();
        let costs: Vec<f64> = e.policies.iter().map(|p| p.cost.unwrap()).collect();
        // order: (0,0), (1,0), (0,1), (1,1)
        let expected = [2.5, 2.4, 2.4, 2.0];
        for (c, x) in costs.iter().zip(expected) {
            assert!((c - x).abs() < 1e-12, "{costs:?}");
        }
        assert_eq!(e.policies[e.best.unwrap()].actions, vec![1, 1]);
        assert!((e.policies[3].spectral_radius - 0.809_016_994_374_947_5).abs() < 1e-12);
    }

    #[test]
    fn tiny_feasibility_edge() {
        // 1.2 < 1 / 0.809 < 1.3
        assert!(enumerate_policies(&tiny(1.2)).unwrap().optimum().is_some());
        let e = enumerate_policies(&tiny(1.3)).unwrap();
        // the nilpotent policy (0, 0) contracts for every gamma
        assert_eq!(e.policies[e.best.unwrap()].actions, vec![0, 0]);
        assert!(e.policies[3].cost.is_none());
    }
}
