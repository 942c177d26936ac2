//! Compressed sparse row matrices and a banded LU for nonsingular M-matrices.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major sparse matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from per-row `(column, value)` lists. Duplicate columns
    /// are summed, explicit zeros dropped.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let start = indices.len();
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::Usage(format!(
                        "row {r}: column {c} out of range {ncols}"
                    )));
                }
                if indices.len() > start && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            // drop explicit zeros
            let mut w = start;
            for k in start..indices.len() {
                if values[k] != 0.0 {
                    indices[w] = indices[k];
                    values[w] = values[k];
                    w += 1;
                }
            }
            indices.truncate(w);
            values.truncate(w);
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let lists = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        Self::from_rows(ncols, lists).expect("dense rows are in range")
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.nrows)
            .map(|r| {
                let mut row = vec![0.0; self.ncols];
                for (c, v) in self.row(r) {
                    row[c] = v;
                }
                row
            })
            .collect()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_indices(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn row_values(&self, r: usize) -> &[f64] {
        &self.values[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        match self.row_indices(r).binary_search(&c) {
            Ok(k) => self.values[self.indptr[r] + k],
            Err(_) => 0.0,
        }
    }

    /// All stored entries as `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row_values(r).iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row_sum(r)).collect()
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `A' x`
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let xr = x[r];
            if xr != 0.0 {
                for (c, v) in self.row(r) {
                    y[c] += v * xr;
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.ncols];
        for (r, c, v) in self.triplets() {
            rows[c].push((r, v));
        }
        CsrMatrix::from_rows(self.nrows, rows).expect("transpose indices are in range")
    }

    /// Entrywise `sum_k w_k A_k`; all inputs must share a shape.
    pub fn weighted_sum(mats: &[&CsrMatrix], weights: &[f64]) -> Result<CsrMatrix> {
        let first = mats
            .first()
            .ok_or_else(|| Error::Usage("weighted_sum of no matrices".into()))?;
        if mats.len() != weights.len() {
            return Err(Error::Usage(format!(
                "{} matrices but {} weights",
                mats.len(),
                weights.len()
            )));
        }
        if mats
            .iter()
            .any(|m| m.nrows != first.nrows || m.ncols != first.ncols)
        {
            return Err(Error::Usage("weighted_sum: shape mismatch".into()));
        }
        let rows = (0..first.nrows)
            .map(|r| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for (m, &w) in mats.iter().zip(weights) {
                    if w != 0.0 {
                        acc.extend(m.row(r).map(|(c, v)| (c, w * v)));
                    }
                }
                // stable sort keeps the input order of equal columns, so the
                // accumulation order is fixed
                acc.sort_by_key(|&(c, _)| c);
                acc
            })
            .collect();
        CsrMatrix::from_rows(first.ncols, rows)
    }

    /// Principal submatrix on the given (ascending) index set.
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut pos = vec![usize::MAX; self.ncols];
        for (k, &i) in keep.iter().enumerate() {
            pos[i] = k;
        }
        let rows = keep
            .iter()
            .map(|&r| {
                self.row(r)
                    .filter(|&(c, _)| pos[c] != usize::MAX)
                    .map(|(c, v)| (pos[c], v))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(keep.len(), rows).expect("positions are in range")
    }

    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        let a = self.to_dense();
        let b = other.to_dense();
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// LU factors of `I - gamma P` (or any Z-matrix) stored in band form after a
/// symmetric RCM permutation. Elimination runs without pivoting: for a
/// Z-matrix every pivot is positive exactly when the matrix is a nonsingular
/// M-matrix, so a non-positive pivot is reported as [`LuFailure::NotMMatrix`].
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// perm[k] = original index placed at position k
    perm: Vec<usize>,
    /// row k holds columns k-kl ..= k+ku
    band: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LuFailure {
    NotMMatrix { position: usize, pivot: f64 },
    NonFinite,
}

impl BandedLu {
    /// Factors `I - gamma * p` where `p` is square and nonnegative.
    pub fn factor_shifted(p: &CsrMatrix, gamma: f64) -> std::result::Result<Self, LuFailure> {
        let n = p.nrows();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for r in 0..n {
            let mut row: Vec<(usize, f64)> = p.row(r).map(|(c, v)| (c, -gamma * v)).collect();
            row.push((r, 1.0));
            rows.push(row);
        }
        let a = CsrMatrix::from_rows(n, rows).expect("square pattern");
        Self::factor(&a)
    }

    /// Factors a square Z-matrix.
    pub fn factor(a: &CsrMatrix) -> std::result::Result<Self, LuFailure> {
        let n = a.nrows();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c, _) in a.triplets() {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            pos[i] = k;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for (r, c, _) in a.triplets() {
            let (pr, pc) = (pos[r], pos[c]);
            if pr > pc {
                kl = kl.max(pr - pc);
            } else {
                ku = ku.max(pc - pr);
            }
        }
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for (r, c, v) in a.triplets() {
            let (pr, pc) = (pos[r], pos[c]);
            band[pr * width + (pc + kl - pr)] += v;
        }
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            perm,
            band,
        };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> usize {
        r * (self.kl + self.ku + 1) + (c + self.kl - r)
    }

    fn eliminate(&mut self) -> std::result::Result<(), LuFailure> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.band[self.at(k, k)];
            if !pivot.is_finite() {
                return Err(LuFailure::NonFinite);
            }
            if pivot <= 0.0 {
                return Err(LuFailure::NotMMatrix { position: k, pivot });
            }
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku).min(n - 1);
            for i in k + 1..=last_row {
                let idx = self.at(i, k);
                let lik = self.band[idx];
                if lik == 0.0 {
                    continue;
                }
                let l = lik / pivot;
                self.band[idx] = l;
                let src = self.at(k, k + 1);
                let dst = self.at(i, k + 1);
                let len = last_col - k;
                for t in 0..len {
                    let u = self.band[src + t];
                    if u != 0.0 {
                        self.band[dst + t] -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        // L y = Pb (unit lower)
        for i in 0..n {
            let first = i.saturating_sub(self.kl);
            let mut s = y[i];
            for k in first..i {
                s -= self.band[self.at(i, k)] * y[k];
            }
            y[i] = s;
        }
        // U x = y
        for i in (0..n).rev() {
            let last = (i + self.ku).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=last {
                s -= self.band[self.at(i, k)] * y[k];
            }
            y[i] = s / self.band[self.at(i, i)];
        }
        let mut x = vec![0.0; n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }

    /// Solves `A' x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        // U' z = Pb (forward, column-oriented)
        for i in 0..n {
            y[i] /= self.band[self.at(i, i)];
            let yi = y[i];
            if yi != 0.0 {
                let last = (i + self.ku).min(n - 1);
                for k in i + 1..=last {
                    y[k] -= self.band[self.at(i, k)] * yi;
                }
            }
        }
        // L' x = z (backward)
        for i in (0..n).rev() {
            let yi = y[i];
            if yi != 0.0 {
                let first = i.saturating_sub(self.kl);
                for k in first..i {
                    y[k] -= self.band[self.at(i, k)] * yi;
                }
            }
        }
        let mut x = vec![0.0; n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }
}

/// Max-norm of a vector.
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    #[test]
    fn from_rows_sums_duplicates_and_drops_zeros() {
        let m = CsrMatrix::from_rows(3, vec![vec![(2, 1.0), (0, 0.5), (2, 0.25)], vec![(1, 0.0)]])
            .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 2), 1.25);
        assert_eq!(m.get(0, 0), 0.5);
        assert_eq!(m.row_indices(1), &[] as &[usize]);
        assert!(CsrMatrix::from_rows(2, vec![vec![(2, 1.0)]]).is_err());
    }

    #[test]
    fn tiny_solve_both_ways() {
        // I - P for P = [[0.5, 0.5], [0.5, 0]]
        let p = CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.0]]);
        let lu = BandedLu::factor_shifted(&p, 1.0).unwrap();
        let v = lu.solve(&[0.2, 0.2]);
        assert!((v[0] - 1.2).abs() < 1e-14 && (v[1] - 0.8).abs() < 1e-14);
        let theta = lu.solve_transpose(&[1.0, 1.0]);
        assert!((theta[0] - 6.0).abs() < 1e-13 && (theta[1] - 4.0).abs() < 1e-13);
    }

    #[test]
    fn detects_non_m_matrix() {
        let p = CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.0]]);
        // rho(P) = 0.809, so 1.3 P has spectral radius above one
        assert!(matches!(
            BandedLu::factor_shifted(&p, 1.3),
            Err(LuFailure::NotMMatrix { .. })
        ));
        let stuck = CsrMatrix::from_dense(&[vec![1.0]]);
        assert!(BandedLu::factor_shifted(&stuck, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn banded_lu_matches_residual(
            n in 2usize..25,
            entries in proptest::collection::vec((0usize..25, 0usize..25, 0.0f64..1.0), 1..120),
            rhs in proptest::collection::vec(-5.0f64..5.0, 25),
        ) {
            // random substochastic matrix scaled to row sums at most 0.9
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for (r, c, v) in entries {
                rows[r % n].push((c % n, v));
            }
            for row in &mut rows {
                let s: f64 = row.iter().map(|e| e.1).sum();
                if s > 0.0 {
                    for e in row.iter_mut() {
                        e.1 *= 0.9 / s;
                    }
                }
            }
            let p = CsrMatrix::from_rows(n, rows).unwrap();
            let lu = BandedLu::factor_shifted(&p, 1.0).unwrap();
            let b = &rhs[..n];
            let a: Vec<Vec<f64>> = p
                .to_dense()
                .iter()
                .enumerate()
                .map(|(i, r)| r.iter().enumerate().map(|(j, &v)| if i == j { 1.0 - v } else { -v }).collect())
                .collect();
            let x = lu.solve(b);
            let res: Vec<f64> = dense_mul(&a, &x).iter().zip(b).map(|(p, q)| p - q).collect();
            prop_assert!(norm_inf(&res) < 1e-10);
            let at: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| a[i][j]).collect()).collect();
            let y = lu.solve_transpose(b);
            let res_t: Vec<f64> = dense_mul(&at, &y).iter().zip(b).map(|(p, q)| p - q).collect();
            prop_assert!(norm_inf(&res_t) < 1e-10);
        }
    }
}
