//! Empirical and Gaussian representations of a distribution.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::sym_eig;

/// Tolerance on `Σ weights = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Tolerance on covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Weighted point cloud in ℝᵈ: an empirical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl PointSet {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::EmptyDistribution);
        }
        if weights.len() != n {
            return Err(Error::SizeMismatch(n, weights.len()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("points"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(PointSet { points, weights })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::EmptyDistribution);
        }
        Self::new(points, Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// True when every weight is bitwise `1/n`.
    pub fn has_canonical_uniform_weights(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| w == u)
    }

    /// True when all weights agree to a relative `1e-12`.
    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| (w - u).abs() <= 1e-12 * u)
    }
}

/// Mean vector and symmetric positive semidefinite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Array1<f64>,
    covariance: Array2<f64>,
}

impl GaussianParams {
    /// Validates symmetry (within `1e-9`, relative to the largest entry when
    /// that exceeds one) and clamps slightly negative eigenvalues to zero.
    /// Eigenvalues below `−1e-9·max(1, ‖Σ‖_max)` are rejected.
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.dim() != (d, d) {
            return Err(Error::DimensionMismatch(d, covariance.nrows()));
        }
        if mean.iter().chain(covariance.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        let scale = covariance.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..d {
            for j in (i + 1)..d {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::invalid(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let covariance = clamp_psd(covariance, SYMMETRY_TOL * scale)?;
        Ok(GaussianParams { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }
}

/// Symmetrizes and, when any eigenvalue is negative, rebuilds the matrix with
/// the spectrum clamped at zero. Matrices that are already PSD are returned
/// unchanged bit for bit apart from symmetrization.
fn clamp_psd(a: Array2<f64>, reject_below: f64) -> Result<Array2<f64>> {
    let d = a.nrows();
    let mut sym = a;
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (sym[[i, j]] + sym[[j, i]]);
            sym[[i, j]] = v;
            sym[[j, i]] = v;
        }
    }
    if d == 0 {
        return Ok(sym);
    }
    let e = sym_eig(sym.view())?;
    let smallest = e.eigenvalues[d - 1];
    if smallest >= 0.0 {
        return Ok(sym);
    }
    if smallest < -reject_below {
        return Err(Error::NotPositiveSemidefinite(smallest));
    }
    Ok(e.reconstruct_with(|l| l.max(0.0)))
}

/// A distribution payload: samples or fitted Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Empirical(PointSet),
    Gaussian(GaussianParams),
}

impl Distribution {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::Empirical(p) => p.dim(),
            Distribution::Gaussian(g) => g.dim(),
        }
    }

    pub fn kind(&self) -> PayloadKind {
        match self {
            Distribution::Empirical(_) => PayloadKind::PointSet,
            Distribution::Gaussian(_) => PayloadKind::Gaussian,
        }
    }

    pub fn as_point_set(&self) -> Option<&PointSet> {
        match self {
            Distribution::Empirical(p) => Some(p),
            Distribution::Gaussian(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    #[serde(rename = "pointset")]
    PointSet,
    Gaussian,
}

/// A payload with its integer class id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDistribution {
    pub payload: Distribution,
    pub label: usize,
}

/// Uniform-weight empirical distribution over the rows of `samples`.
pub fn empirical_from_samples(samples: ArrayView2<f64>) -> Result<PointSet> {
    PointSet::uniform(samples.to_owned())
}

/// Sample mean and sample covariance (divisor `n − 1`), symmetrized, with
/// negative eigenvalues clamped to zero.
pub fn gaussian_fit(samples: ArrayView2<f64>) -> Result<GaussianParams> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("samples"));
    }
    let mean = samples.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &samples - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    // Any negative eigenvalue here is rounding, so clamp unconditionally.
    let covariance = clamp_psd(cov, f64::INFINITY)?;
    Ok(GaussianParams { mean, covariance })
}

/// Gaussian fit of an empirical payload; Gaussian payloads pass through.
pub fn as_gaussian(dist: &Distribution) -> Result<GaussianParams> {
    match dist {
        Distribution::Gaussian(g) => Ok(g.clone()),
        Distribution::Empirical(p) => {
            if p.is_uniform() {
                gaussian_fit(p.points().view())
            } else {
                weighted_gaussian_fit(p)
            }
        }
    }
}

/// Weighted mean and reliability-weighted covariance
/// `Σ wᵢ(xᵢ−m)(xᵢ−m)ᵀ / (1 − Σ wᵢ²)`, the weighted analogue of divisor `n − 1`.
fn weighted_gaussian_fit(p: &PointSet) -> Result<GaussianParams> {
    let w = p.weights();
    let x = p.points();
    let denom = 1.0 - w.iter().map(|v| v * v).sum::<f64>();
    if denom <= 0.0 {
        return Err(Error::InsufficientSamples(1));
    }
    let mean = x.t().dot(w);
    let centered = x - &mean;
    let scaled = &centered * &w.view().insert_axis(Axis(1));
    let cov = centered.t().dot(&scaled) / denom;
    let covariance = clamp_psd(cov, f64::INFINITY)?;
    Ok(GaussianParams { mean, covariance })
}
