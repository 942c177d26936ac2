#![allow(dead_code)]

use pfstab_core::lp::StabilizationLp;
use pfstab_core::sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two cells plus attractor, two actions, `m = (1, 1)`.
pub fn tiny(gamma: f64) -> StabilizationLp {
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

/// Random substochastic row: a few positive entries summing to at most 1,
/// exactly 1 with probability `closed`.
pub fn random_row(rng: &mut ChaCha8Rng, n: usize, closed: f64) -> Vec<f64> {
    let mut row = vec![0.0; n];
    for v in row.iter_mut() {
        if rng.random::<f64>() < 0.6 {
            *v = rng.random::<f64>();
        }
    }
    let s: f64 = row.iter().sum();
    if s == 0.0 {
        return row;
    }
    let total = if rng.random::<f64>() < closed {
        1.0
    } else {
        rng.random_range(0.2..1.0)
    };
    row.iter().map(|v| v / s * total).collect()
}

/// Random LP without a sink: `n` cells, `m` actions.
pub fn random_lp(seed: u64, n: usize, m: usize, gamma: f64) -> StabilizationLp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrices = (0..m)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| random_row(&mut rng, n, 0.3)).collect();
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
