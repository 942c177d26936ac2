//! Lyapunov measure and stability certificate properties.

mod common;

use common::random_row;
use pfstab_core::certificate::{lyapunov_measure, neumann_check, verify_stability};
use pfstab_core::models::{ControlGrid, NoiseModel, Pendulum, PendulumUncertainty, QuadraticCost};
use pfstab_core::partition::{AttractorBox, Partition};
use pfstab_core::sparse::CsrMatrix;
use pfstab_core::transfer::{build_ensemble, EnsembleConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Random substochastic matrix scaled so that its row sums are at most `cap`.
fn contracting(seed: u64, n: usize, cap: f64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            random_row(&mut rng, n, 0.0)
                .iter()
                .map(|v| v * cap)
                .collect()
        })
        .collect();
    CsrMatrix::from_dense(&rows)
}

#[test]
fn tiny_chain_measure_and_radius() {
    let p = CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.0]]);
    let (cert, meas) = verify_stability(&p, &[1.0, 1.0], 1.0).unwrap();
    assert!(cert.is_certified());
    assert!((cert.spectral_radius - 0.809_016_994_374_947_4).abs() < 1e-9);
    let mu = meas.unwrap().mu;
    assert!((mu[0] - 6.0).abs() < 1e-12 && (mu[1] - 4.0).abs() < 1e-12);
}

#[test]
fn uncontrolled_pendulum_is_not_certified() {
    let part = Partition::build_grid(
        &[(-PI, PI), (-10.0, 10.0)],
        &[30, 30],
        &[true, false],
        AttractorBox {
            center: vec![0.0, 0.0],
            half_widths: vec![0.01, 0.01],
        },
    )
    .unwrap();
    let sys = Pendulum::new(0.1, PendulumUncertainty::None);
    let controls = ControlGrid::new(vec![vec![0.0]]).unwrap();
    let e = build_ensemble(
        &sys,
        &QuadraticCost,
        &part,
        &controls,
        &NoiseModel::none(1),
        &EnsembleConfig::default(),
        String::new(),
    )
    .unwrap();
    // drop the sink, keep the ordinary chain
    let keep: Vec<usize> = (0..part.n_ordinary()).collect();
    let p = e.restricted(0).matrix.submatrix(&keep);
    let mass = vec![part.cell_volume(); keep.len()];
    let (cert, _) = verify_stability(&p, &mass, 1.01).unwrap();
    // grid diffusion slowly drains the swinging orbits into the sink, so the
    // chain decays, but far too slowly for any geometric rate above 1
    assert!(cert.decay_bound > 0.99);
    assert!(!cert.is_certified());
    assert!(!cert.non_decaying_support.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_chain_measure_is_the_mass(
        mass in prop::collection::vec(0.0f64..3.0, 1..8),
        gamma in 0.5f64..50.0,
    ) {
        let p = CsrMatrix::zeros(mass.len(), mass.len());
        let meas = lyapunov_measure(&p, &mass, gamma).unwrap();
        prop_assert_eq!(meas.mu, mass);
    }

    #[test]
    fn measure_is_homogeneous_in_the_mass(
        seed in any::<u64>(),
        n in 1usize..7,
        scale in 0.01f64..100.0,
    ) {
        let p = contracting(seed, n, 0.9);
        let mass: Vec<f64> = (0..n).map(|j| 1.0 + j as f64 * 0.25).collect();
        let scaled: Vec<f64> = mass.iter().map(|m| m * scale).collect();
        let a = lyapunov_measure(&p, &mass, 1.0).unwrap().mu;
        let b = lyapunov_measure(&p, &scaled, 1.0).unwrap().mu;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x * scale - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn measure_grows_with_gamma(seed in any::<u64>(), n in 1usize..7, g in 1.0f64..1.1) {
        let p = contracting(seed, n, 0.85);
        let mass = vec![1.0; n];
        let lo = lyapunov_measure(&p, &mass, g).unwrap().mu;
        let hi = lyapunov_measure(&p, &mass, g + 0.05).unwrap().mu;
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(*b >= *a - 1e-12);
            prop_assert!(*a >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn neumann_series_converges_to_the_measure(seed in any::<u64>(), n in 1usize..7) {
        let p = contracting(seed, n, 0.9);
        let mass: Vec<f64> = (0..n).map(|j| 0.5 + j as f64).collect();
        let meas = lyapunov_measure(&p, &mass, 1.0).unwrap();
        prop_assert!(meas.residual < 1e-10);
        let check = neumann_check(&p, &mass, 1.0, &meas.mu, 500);
        prop_assert!(check.monotone);
        prop_assert!(check.bounded);
        prop_assert!(check.relative_gap < 1e-9, "gap {}", check.relative_gap);
    }

    #[test]
    fn certified_chains_have_radius_below_one(seed in any::<u64>(), n in 1usize..7, cap in 0.1f64..0.95) {
        let p = contracting(seed, n, cap);
        let (cert, meas) = verify_stability(&p, &vec![1.0; n], 1.0).unwrap();
        prop_assert!(cert.is_certified(), "{:?}", cert.reasons);
        prop_assert!(cert.spectral_radius <= cap + 1e-9);
        let bound = cert.radius_upper_bound.unwrap();
        prop_assert!(bound >= cert.spectral_radius - 1e-9);
        prop_assert!(meas.unwrap().mu.iter().all(|&m| m >= 1.0 - 1e-12));
    }
}
