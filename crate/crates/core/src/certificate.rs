//! Lyapunov measure certificates for closed-loop or autonomous chains.
//!
//! All chain quantities are computed on the sub-chain reachable from the
//! support of `m`. Indices outside it (an unreached sink, for instance)
//! never carry mass, so they have `mu = 0` and do not affect decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{norm_inf, BandedLu, CsrMatrix};
use crate::spectral::{reachable_from, spectral_radius};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;
/// Margin below one required of `rho(gamma P)`.
pub const RADIUS_MARGIN: f64 = 1e-10;
/// Residual tolerance factor, scaled by `1 + |m|_inf`.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Certified,
    NotCertified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovMeasure {
    pub mu: Vec<f64>,
    /// `|gamma P' mu - mu + m|_inf`
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub gamma: f64,
    /// `rho(gamma P)` on the mass-reachable sub-chain.
    pub spectral_radius: f64,
    /// `rho(P)`, the geometric decay rate of the chain.
    pub decay_bound: f64,
    pub power_iterations: usize,
    pub power_converged: bool,
    /// Collatz-Wielandt upper bound `max_j (1 - m_j / mu_j)` on `rho(gamma P)`
    /// when a positive measure exists.
    pub radius_upper_bound: Option<f64>,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    /// Number of indices in the mass-reachable sub-chain.
    pub reachable: usize,
    /// Support of the dominant eigenvector when not certified.
    pub non_decaying_support: Vec<usize>,
}

impl StabilityCertificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// Partial sums `S_K = sum_{n <= K} gamma^n (P')^n m` compared against `mu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannCheck {
    pub terms: usize,
    /// Every partial sum is entrywise nondecreasing.
    pub monotone: bool,
    /// Every partial sum stays below `mu` (up to tolerance).
    pub bounded: bool,
    /// `|mu - S_K|_inf / |mu|_inf`
    pub relative_gap: f64,
    /// Relative gap after each term.
    pub gaps: Vec<f64>,
}

fn reachable_subchain(p: &CsrMatrix, mass: &[f64]) -> Vec<usize> {
    reachable_from(p, (0..p.nrows()).filter(|&j| mass[j] > 0.0))
}

fn check_inputs(p: &CsrMatrix, mass: &[f64], gamma: f64) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() != mass.len() {
        return Err(Error::Usage(format!(
            "matrix is {}x{}, mass vector has length {}",
            p.nrows(),
            p.ncols(),
            mass.len()
        )));
    }
    if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::Usage(
            "mass vector must be finite and nonnegative".into(),
        ));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Usage(format!("gamma must be positive, got {gamma}")));
    }
    if p.triplets().any(|(_, _, v)| !(v >= 0.0)) {
        return Err(Error::Usage("matrix has negative or NaN entries".into()));
    }
    Ok(())
}

/// `mu = (I - gamma P')^{-1} m`, zero outside the mass-reachable sub-chain.
/// Fails with a numeric error when the sub-chain does not contract.
pub fn lyapunov_measure(p: &CsrMatrix, mass: &[f64], gamma: f64) -> Result<LyapunovMeasure> {
    check_inputs(p, mass, gamma)?;
    let keep = reachable_subchain(p, mass);
    let sub = p.submatrix(&keep);
    let lu = BandedLu::factor_shifted(&sub, gamma).map_err(|e| {
        Error::Numeric(format!("I - gamma P' is not a nonsingular M-matrix: {e:?}"))
    })?;
    let m_sub: Vec<f64> = keep.iter().map(|&j| mass[j]).collect();
    let mu_sub = lu.solve_transpose(&m_sub);
    let mut mu = vec![0.0; p.nrows()];
    for (k, &j) in keep.iter().enumerate() {
        mu[j] = mu_sub[k];
    }
    let residual = measure_residual(p, mass, gamma, &mu);
    Ok(LyapunovMeasure { mu, residual })
}

/// `|gamma P' mu - mu + m|_inf`
pub fn measure_residual(p: &CsrMatrix, mass: &[f64], gamma: f64, mu: &[f64]) -> f64 {
    let pt = p.tmul_vec(mu);
    let r: Vec<f64> = (0..mu.len())
        .map(|j| gamma * pt[j] - mu[j] + mass[j])
        .collect();
    norm_inf(&r)
}

/// Certifies almost-everywhere stability of the chain `P` (attractor row and
/// column removed) with decay parameter `gamma`.
pub fn verify_stability(
    p: &CsrMatrix,
    mass: &[f64],
    gamma: f64,
) -> Result<(StabilityCertificate, Option<LyapunovMeasure>)> {
    check_inputs(p, mass, gamma)?;
    let keep = reachable_subchain(p, mass);
    let sub = p.submatrix(&keep);
    let est = spectral_radius(&sub, POWER_TOL, POWER_MAX_ITER);
    let decay_bound = est.radius;
    let mut cert = StabilityCertificate {
        gamma,
        spectral_radius: gamma * decay_bound,
        decay_bound,
        power_iterations: est.iterations,
        power_converged: est.converged,
        radius_upper_bound: None,
        verdict: Verdict::NotCertified,
        reasons: Vec::new(),
        reachable: keep.len(),
        non_decaying_support: Vec::new(),
    };
    if gamma < 1.0 {
        cert.reasons.push(format!(
            "gamma = {gamma} is below 1; no geometric decay is implied"
        ));
    }
    let measure = match lyapunov_measure(p, mass, gamma) {
        Ok(m) => Some(m),
        Err(e) => {
            cert.reasons.push(e.to_string());
            None
        }
    };
    if let Some(meas) = &measure {
        let bound = keep
            .iter()
            .filter(|&&j| meas.mu[j] > 0.0)
            .map(|&j| 1.0 - mass[j] / meas.mu[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if keep.iter().all(|&j| meas.mu[j] > 0.0) && bound.is_finite() {
            cert.radius_upper_bound = Some(bound.max(0.0));
        }
        if !est.converged {
            // the measure bound is rigorous; prefer it over an unsettled estimate
            if let Some(b) = cert.radius_upper_bound {
                cert.spectral_radius = b;
                cert.decay_bound = b / gamma;
            }
        }
        let tol = RESIDUAL_TOL * (1.0 + norm_inf(mass));
        if meas.residual > tol {
            cert.reasons.push(format!(
                "measure residual {:.3e} exceeds {tol:.3e}",
                meas.residual
            ));
        }
        if gamma >= 1.0 {
            if let Some(j) = (0..mass.len()).find(|&j| meas.mu[j] < mass[j] - tol) {
                cert.reasons.push(format!(
                    "mu[{j}] = {} falls below m[{j}] = {}",
                    meas.mu[j], mass[j]
                ));
            }
        }
        if let Some(j) = (0..mass.len()).find(|&j| meas.mu[j] < 0.0) {
            cert.reasons.push(format!("mu[{j}] is negative"));
        }
    }
    if !(cert.spectral_radius < 1.0 - RADIUS_MARGIN) {
        cert.reasons.push(format!(
            "rho(gamma P) = {:.12} is not below 1 - {RADIUS_MARGIN:e}",
            cert.spectral_radius
        ));
    }
    if cert.reasons.is_empty() {
        cert.verdict = Verdict::Certified;
    } else {
        let vmax = est.vector.iter().fold(0.0f64, |m, &v| m.max(v));
        cert.non_decaying_support = keep
            .iter()
            .zip(&est.vector)
            .filter(|(_, &v)| v > 1e-6 * vmax)
            .map(|(&j, _)| j)
            .collect();
    }
    Ok((cert, measure))
}

/// Neumann partial sums up to `terms`, checked for monotone growth and
/// the bound `S_K <= mu`.
pub fn neumann_check(
    p: &CsrMatrix,
    mass: &[f64],
    gamma: f64,
    mu: &[f64],
    terms: usize,
) -> NeumannCheck {
    let scale = norm_inf(mu).max(f64::MIN_POSITIVE);
    let slack = 1e-9 * (1.0 + scale);
    let mut term = mass.to_vec();
    let mut sum = mass.to_vec();
    let mut monotone = true;
    let mut bounded = sum.iter().zip(mu).all(|(s, m)| *s <= m + slack);
    let mut gaps = Vec::with_capacity(terms);
    for _ in 0..terms {
        term = p.tmul_vec(&term);
        for t in &mut term {
            *t *= gamma;
        }
        if term.iter().any(|&t| t < 0.0) {
            monotone = false;
        }
        for (s, t) in sum.iter_mut().zip(&term) {
            *s += t;
        }
        bounded &= sum.iter().zip(mu).all(|(s, m)| *s <= m + slack);
        let gap = sum
            .iter()
            .zip(mu)
            .map(|(s, m)| (m - s).abs())
            .fold(0.0, f64::max)
            / scale;
        if let Some(&last) = gaps.last() {
            if gap > last + 1e-12 {
                monotone = false;
            }
        }
        gaps.push(gap);
    }
    NeumannCheck {
        terms,
        monotone,
        bounded,
        relative_gap: gaps.last().copied().unwrap_or(0.0),
        gaps,
    }
}
