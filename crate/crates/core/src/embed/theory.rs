//! Sample-complexity formulas and margin predictions for the embedding.

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::gaussian::bures_deviation_bound;
use crate::mmd::{mmd2_gaussian_approx, mmd_deviation_bound};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {v}"
        )))
    }
}

fn ceil_count(x: f64) -> Result<u64> {
    if !x.is_finite() || x > u64::MAX as f64 {
        return Err(Error::invalid(format!(
            "sample size {x} is not representable"
        )));
    }
    Ok(x.ceil().max(0.0) as u64)
}

/// Templates per class needed with population distributions:
/// `⌈(4M/γ)² ln(2/δ)⌉`.
pub fn sample_complexity_population(m: f64, gamma: f64, delta: f64) -> Result<u64> {
    positive("M", m)?;
    if !(gamma > 0.0 && gamma <= 4.0 * m) {
        return Err(Error::invalid(format!(
            "gamma must lie in (0, 4M], got {gamma}"
        )));
    }
    open_unit("delta", delta)?;
    let r = 4.0 * m / gamma;
    ceil_count(r * r * (2.0 / delta).ln())
}

/// Templates per class needed with empirical distributions:
/// `⌈(32M²/γ²) ln(2/(δ²(1 − λ)))⌉`.
pub fn sample_complexity_empirical(
    m: f64,
    gamma: f64,
    delta: f64,
    lambda_tradeoff: f64,
) -> Result<u64> {
    positive("M", m)?;
    positive("gamma", gamma)?;
    open_unit("delta", delta)?;
    open_unit("lambda_tradeoff", lambda_tradeoff)?;
    let denom = delta * delta * (1.0 - lambda_tradeoff);
    ceil_count(32.0 * m * m / (gamma * gamma) * (2.0 / denom).ln())
}

/// Concentration bounds `P(D(μ, μ̂_N) > ε) ≤ g₁(N, ε)` with known form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConcentrationBound {
    Mmd { kernel_bound: f64 },
    Bures { dim: usize, c_v: f64, c_sigma: f64 },
}

impl ConcentrationBound {
    pub fn eval(&self, n_samples: usize, eps: f64) -> Result<f64> {
        match *self {
            ConcentrationBound::Mmd { kernel_bound } => {
                mmd_deviation_bound(n_samples, kernel_bound, eps)
            }
            ConcentrationBound::Bures { dim, c_v, c_sigma } => {
                bures_deviation_bound(n_samples as f64, dim as f64, eps, c_v, c_sigma)
            }
        }
    }
}

/// Whether `N` samples per distribution satisfy `δ²λ ≥ N·g₁(N, ε/4)`.
pub fn sample_condition_holds(
    delta: f64,
    lambda_tradeoff: f64,
    n_samples: usize,
    eps: f64,
    g1: impl Fn(usize, f64) -> Result<f64>,
) -> Result<bool> {
    open_unit("delta", delta)?;
    open_unit("lambda_tradeoff", lambda_tradeoff)?;
    positive("eps", eps)?;
    let rhs = n_samples as f64 * g1(n_samples, eps / 4.0)?;
    Ok(delta * delta * lambda_tradeoff >= rhs)
}

/// Predicted margins for two classes of Gaussians `N(mᵢ, σ²I)` whose means
/// are drawn around `m_neg` and `m_pos`: `(α‖Δm‖², α·MMD²-approximation)`.
pub fn margin_theory(
    m_neg: ArrayView1<f64>,
    m_pos: ArrayView1<f64>,
    alpha: f64,
    sigma: f64,
    sigma_k: f64,
    d: usize,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let mmd = mmd2_gaussian_approx(m_neg, m_pos, sigma, sigma_k, d)?;
    let d_star: f64 = m_neg
        .iter()
        .zip(m_pos.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((alpha * d_star, alpha * mmd))
}
