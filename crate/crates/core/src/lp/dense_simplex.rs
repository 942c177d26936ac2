//! Two-phase tableau simplex with Bland's rule.

use crate::error::{Error, Result};

use super::{
    InfeasibilityDiagnostic, LpSolution, SolveOptions, SolveStatus, StabilizationLp, DENSE_LIMIT,
};

const METHOD: &str = "dense-simplex";
const PIVOT_EPS: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solution of `min c'x  s.t.  Ax = b, x >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardFormSolution {
    pub outcome: DenseOutcome,
    pub x: Vec<f64>,
    /// Dual solution of `max b'y  s.t.  A'y <= c`.
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Rows still carrying artificial mass when phase 1 ends infeasible.
    pub infeasible_rows: Vec<usize>,
}

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        for k in 0..w {
            self.data[r * w + k] /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.data[i * w + c];
            if f != 0.0 {
                for k in 0..w {
                    self.data[i * w + k] -= f * pivot_row[k];
                }
                self.data[i * w + c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Bland iterations over entering columns `0..limit`.
    fn run(&mut self, limit: usize, max_iter: usize, iterations: &mut usize) -> Result<bool> {
        let obj = self.rows;
        loop {
            let Some(col) = (0..limit).find(|&j| self.at(obj, j) < -PIVOT_EPS) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, col);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((l, best)) => {
                            ratio < best - 1e-14
                                || (ratio <= best + 1e-14 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            if *iterations >= max_iter {
                return Err(Error::Solver {
                    iterations: *iterations,
                    message: "dense simplex iteration limit".into(),
                });
            }
            self.pivot(r, col);
            *iterations += 1;
        }
    }
}

/// Solves a standard-form LP. `a` is dense, row-major.
pub fn solve_standard_form(
    a: &[Vec<f64>],
    b: &[f64],
    c: &[f64],
    max_iter: usize,
) -> Result<StandardFormSolution> {
    let m = a.len();
    let n = c.len();
    if b.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::Usage("standard-form shapes disagree".into()));
    }
    let sign: Vec<f64> = b
        .iter()
        .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let width = n + m + 1;
    let mut t = Tableau {
        rows: m,
        width,
        data: vec![0.0; (m + 1) * width],
        basis: (n..n + m).collect(),
    };
    for i in 0..m {
        for j in 0..n {
            t.data[i * width + j] = sign[i] * a[i][j];
        }
        t.data[i * width + n + i] = 1.0;
        t.data[i * width + width - 1] = sign[i] * b[i];
    }
    // phase 1 reduced costs: minus the column sums
    for j in (0..n).chain(std::iter::once(width - 1)) {
        let s: f64 = (0..m).map(|i| t.at(i, j)).sum();
        t.data[m * width + j] = -s;
    }
    let mut iterations = 0;
    t.run(n, max_iter, &mut iterations)?;
    let scale = 1.0 + b.iter().fold(0.0f64, |x, v| x.max(v.abs()));
    let infeasibility = -t.rhs(m);
    if infeasibility > 1e-9 * scale {
        let infeasible_rows = (0..m)
            .filter(|&i| t.basis[i] >= n && t.rhs(i) > 1e-9 * scale)
            .collect();
        return Ok(StandardFormSolution {
            outcome: DenseOutcome::Infeasible,
            x: Vec::new(),
            y: Vec::new(),
            objective: f64::NAN,
            iterations,
            infeasible_rows,
        });
    }
    // Drive zero-level artificials out of the basis; rows where that is
    // impossible are redundant and stay inert.
    for i in 0..m {
        if t.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t.at(i, j).abs() > 1e-9) {
                t.pivot(i, j);
            }
        }
    }
    // phase 2 objective row, artificial columns priced at zero
    for j in 0..width {
        let cj = if j < n { c[j] } else { 0.0 };
        let cb: f64 = (0..m)
            .map(|i| {
                if t.basis[i] < n {
                    c[t.basis[i]] * t.at(i, j)
                } else {
                    0.0
                }
            })
            .sum();
        t.data[m * width + j] = if j == width - 1 { -cb } else { cj - cb };
    }
    let bounded = t.run(n, max_iter, &mut iterations)?;
    if !bounded {
        return Ok(StandardFormSolution {
            outcome: DenseOutcome::Unbounded,
            x: Vec::new(),
            y: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations,
            infeasible_rows: Vec::new(),
        });
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    // reduced cost of artificial k is -y_k in the sign-flipped system
    let y: Vec<f64> = (0..m).map(|k| -sign[k] * t.at(m, n + k)).collect();
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(StandardFormSolution {
        outcome: DenseOutcome::Optimal,
        x,
        y,
        objective,
        iterations,
        infeasible_rows: Vec::new(),
    })
}

pub(super) fn solve_lp_dense(lp: &StabilizationLp, opts: &SolveOptions) -> Result<LpSolution> {
    let n = lp.n_cells();
    let n_act = lp.n_actions();
    if lp.n_variables() * n > DENSE_LIMIT {
        return Err(Error::Usage(format!(
            "dense simplex limited to {DENSE_LIMIT} tableau entries; instance has {} variables and {n} rows",
            lp.n_variables()
        )));
    }
    // rows: sum_a theta^a - gamma sum_a P_a' theta^a = m, so the dual is V itself
    let mut a = vec![vec![0.0; n_act * n]; n];
    let mut c = vec![0.0; n_act * n];
    for (act, p) in lp.matrices.iter().enumerate() {
        for j in 0..n {
            let col = act * n + j;
            a[j][col] += 1.0;
            for (i, v) in p.row(j) {
                a[i][col] -= lp.gamma * v;
            }
            c[col] = lp.costs[act][j];
        }
    }
    let sol = solve_standard_form(&a, &lp.mass, &c, opts.max_iterations.max(50 * n_act * n))?;
    match sol.outcome {
        DenseOutcome::Optimal => {
            let theta = (0..n_act)
                .map(|act| sol.x[act * n..(act + 1) * n].to_vec())
                .collect();
            Ok(LpSolution {
                status: SolveStatus::Optimal,
                gamma: lp.gamma,
                theta,
                value: sol.y,
                primal_objective: 0.0,
                dual_objective: 0.0,
                equality_residual: 0.0,
                duality_gap: 0.0,
                dual_violation: 0.0,
                iterations: sol.iterations,
                method: METHOD.to_string(),
                diagnostic: None,
            })
        }
        DenseOutcome::Infeasible => {
            let diag = InfeasibilityDiagnostic {
                message: format!(
                    "phase 1 leaves {} rows with artificial mass",
                    sol.infeasible_rows.len()
                ),
                residual_rows: sol.infeasible_rows,
                ..Default::default()
            };
            Ok(LpSolution::infeasible(
                lp.gamma,
                sol.iterations,
                METHOD,
                diag,
            ))
        }
        DenseOutcome::Unbounded => Ok(LpSolution {
            status: SolveStatus::Unbounded,
            gamma: lp.gamma,
            theta: Vec::new(),
            value: Vec::new(),
            primal_objective: f64::NEG_INFINITY,
            dual_objective: f64::NAN,
            equality_residual: f64::NAN,
            duality_gap: f64::NAN,
            dual_violation: f64::NAN,
            iterations: sol.iterations,
            method: METHOD.to_string(),
            diagnostic: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // min -x1 - x2  s.t. x1 + 2x2 + s1 = 4, 3x1 + x2 + s2 = 6
        let a = vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]];
        let sol = solve_standard_form(&a, &[4.0, 6.0], &[-1.0, -1.0, 0.0, 0.0], 100).unwrap();
        assert_eq!(sol.outcome, DenseOutcome::Optimal);
        assert!((sol.objective + 2.8).abs() < 1e-12);
        assert!((sol.x[0] - 1.6).abs() < 1e-12 && (sol.x[1] - 1.2).abs() < 1e-12);
        // dual objective equals primal
        assert!((4.0 * sol.y[0] + 6.0 * sol.y[1] + 2.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let a = vec![vec![1.0, 1.0]];
        let sol = solve_standard_form(&a, &[-1.0], &[1.0, 1.0], 100).unwrap();
        assert_eq!(sol.outcome, DenseOutcome::Infeasible);
        assert_eq!(sol.infeasible_rows, vec![0]);
        let a = vec![vec![1.0, -1.0]];
        let sol = solve_standard_form(&a, &[1.0], &[0.0, -1.0], 100).unwrap();
        assert_eq!(sol.outcome, DenseOutcome::Unbounded);
    }

    #[test]
    fn redundant_row() {
        let a = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let sol = solve_standard_form(&a, &[1.0, 2.0], &[1.0, 3.0], 100).unwrap();
        assert_eq!(sol.outcome, DenseOutcome::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }
}
