//! Closed-form 2-Wasserstein distance between Gaussians (Bures-Wasserstein).
//!
//! `W₂²(N(m₁,Σ₁), N(m₂,Σ₂)) = ‖m₁ − m₂‖² + B(Σ₁,Σ₂)²` with
//! `B(Σ₁,Σ₂)² = tr(Σ₁ + Σ₂ − 2(Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`.
//!
//! Rank-deficient covariances receive a small isotropic jitter
//! (`1e-10·tr(Σ)/d`) before the Bures term is evaluated.

mod eig;

use ndarray::{Array2, ArrayView1, ArrayView2};

pub use eig::{sym_eig, sym_eigvals, SymEig, MAX_SWEEPS, OFF_DIAGONAL_TOL};

use crate::distribution::GaussianParams;
use crate::error::{Error, Result};

/// Relative jitter added to rank-deficient covariances.
pub const JITTER_SCALE: f64 = 1e-10;

/// Eigenvalues at or below this fraction of the largest one count as zero.
const RANK_TOL: f64 = 1e-14;

/// Principal square root of a symmetric positive semidefinite matrix.
/// Negative eigenvalues are clamped to zero.
pub fn spd_sqrt(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let e = sym_eig(a)?;
    Ok(e.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Jittered copy of a covariance, following the rank-deficiency policy.
pub fn jittered(cov: ArrayView2<f64>) -> Result<Array2<f64>> {
    let e = sym_eig(cov)?;
    let jitter = jitter_amount(cov, &e);
    let mut out = cov.to_owned();
    for i in 0..out.nrows() {
        out[[i, i]] += jitter;
    }
    Ok(out)
}

/// `1e-10·tr(Σ)/d` when the smallest clamped eigenvalue is zero, else 0.
fn jitter_amount(cov: ArrayView2<f64>, e: &SymEig) -> f64 {
    let d = e.dim();
    if d == 0 {
        return 0.0;
    }
    let top = e.eigenvalues[0].max(0.0);
    let bottom = e.eigenvalues[d - 1].max(0.0);
    if bottom <= RANK_TOL * top {
        let trace: f64 = (0..d).map(|i| cov[[i, i]]).sum();
        JITTER_SCALE * trace.max(0.0) / d as f64
    } else {
        0.0
    }
}

fn check_square_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<usize> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::DimensionMismatch(n, m));
    }
    if b.dim() != (n, n) {
        return Err(Error::DimensionMismatch(n, b.nrows()));
    }
    Ok(n)
}

/// Bures metric `B(Σ₁, Σ₂)`.
pub fn bures(s1: ArrayView2<f64>, s2: ArrayView2<f64>) -> Result<f64> {
    check_square_pair(s1, s2)?;
    if s1 == s2 {
        return Ok(0.0);
    }
    let f1 = BuresFactor::new(s1)?;
    let f2 = BuresFactor::new(s2)?;
    f1.bures_to(&f2)
}

/// Closed-form `W₂` between two Gaussians.
pub fn bures_wasserstein(g1: &GaussianParams, g2: &GaussianParams) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch(g1.dim(), g2.dim()));
    }
    let mean_sq = squared_distance(g1.mean().view(), g2.mean().view());
    let b = bures(g1.covariance().view(), g2.covariance().view())?;
    Ok((mean_sq + b * b).sqrt())
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-covariance data reused across many Bures evaluations: the jittered
/// covariance's square root and trace.
#[derive(Debug, Clone)]
pub struct BuresFactor {
    dim: usize,
    /// Row-major `Σ'^{1/2}`.
    sqrt: Vec<f64>,
    trace: f64,
    /// Bit pattern of the source covariance, for the exact self-distance.
    source: Array2<f64>,
}

impl BuresFactor {
    pub fn new(cov: ArrayView2<f64>) -> Result<Self> {
        let (n, m) = cov.dim();
        if n != m {
            return Err(Error::DimensionMismatch(n, m));
        }
        let e = sym_eig(cov)?;
        let jitter = jitter_amount(cov, &e);
        // Jitter only shifts the spectrum, so the eigenvectors of `cov` serve.
        let root = e.reconstruct_with(|l| (l.max(0.0) + jitter).sqrt());
        let trace = e.eigenvalues.iter().map(|l| l.max(0.0) + jitter).sum();
        Ok(BuresFactor {
            dim: n,
            sqrt: root.iter().copied().collect(),
            trace,
            source: cov.to_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `tr((Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`, computed as the nuclear norm of
    /// `Σ₁^{1/2} Σ₂^{1/2}` through the eigenvalues of `P Pᵀ`.
    fn trace_sqrt_product(&self, other: &BuresFactor) -> Result<f64> {
        let d = self.dim;
        let (r1, r2) = (&self.sqrt, &other.sqrt);
        let mut p = vec![0.0; d * d];
        for i in 0..d {
            let row = &mut p[i * d..(i + 1) * d];
            for k in 0..d {
                let a = r1[i * d + k];
                if a == 0.0 {
                    continue;
                }
                let r2k = &r2[k * d..(k + 1) * d];
                for (x, y) in row.iter_mut().zip(r2k) {
                    *x += a * y;
                }
            }
        }
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            let pi = &p[i * d..(i + 1) * d];
            for j in i..d {
                let pj = &p[j * d..(j + 1) * d];
                let s: f64 = pi.iter().zip(pj).map(|(x, y)| x * y).sum();
                m[i * d + j] = s;
                m[j * d + i] = s;
            }
        }
        let vals = eig::tridiagonal_eigvals(d, &mut m)?;
        Ok(vals.iter().map(|l| l.max(0.0).sqrt()).sum())
    }

    /// Bures metric to another factor of the same dimension.
    pub fn bures_to(&self, other: &BuresFactor) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        if self.source == other.source {
            return Ok(0.0);
        }
        let cross = self.trace_sqrt_product(other)?;
        let b2 = self.trace + other.trace - 2.0 * cross;
        Ok(b2.max(0.0).sqrt())
    }
}

/// Right-hand side of the Gaussian plug-in deviation inequality
/// `P(W₂(μ, μ̂_N) > ε)`, clamped to `[0, 1]`:
///
/// `2d·exp(−(Nε²/(8d⁴)) / (C_v·C_Σ + 2C_v·ε/(3d²))) + exp(−(√N·ε²/(24√C_v) − 1)^{1/2})`
///
/// The second term is taken as 1 when the quantity under its square root is
/// negative.
pub fn bures_deviation_bound(
    n_samples: f64,
    dim: f64,
    eps: f64,
    c_v: f64,
    c_sigma: f64,
) -> Result<f64> {
    for (name, v) in [
        ("N", n_samples),
        ("d", dim),
        ("eps", eps),
        ("C_v", c_v),
        ("C_sigma", c_sigma),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let d2 = dim * dim;
    let first_num = n_samples * eps * eps / (8.0 * d2 * d2);
    let first_den = c_v * c_sigma + 2.0 * c_v * eps / (3.0 * d2);
    let first = 2.0 * dim * (-first_num / first_den).exp();

    let inner = n_samples.sqrt() / (24.0 * c_v.sqrt()) * eps * eps - 1.0;
    let second = if inner < 0.0 {
        1.0
    } else {
        (-inner.sqrt()).exp()
    };

    Ok((first + second).clamp(0.0, 1.0))
}
