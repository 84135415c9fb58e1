//! Synthetic distribution datasets and point-cloud ingestion.

mod clouds;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::DistributionDataset;
use crate::distribution::{
    empirical_from_samples, Distribution, GaussianParams, LabeledDistribution,
};
use crate::error::{Error, Result};

pub use clouds::{load_point_cloud_dir, parse_off, write_shape_corpus, CloudLoadOptions, Shape};

/// Eigenvalue floor for generated covariances.
pub const SPD_FLOOR: f64 = 1e-9;
/// Draws of `u` before a class's covariance is declared infeasible.
pub const MAX_RESAMPLES: usize = 100;

/// Three classes of Gaussians `N(mᵢ, σ_c I + uᵢ(I₁ + I₋₁))` that differ only in
/// the correlation between neighbouring coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec3Class {
    pub d: usize,
    pub n_dists: usize,
    /// Samples per distribution.
    pub n_samples: usize,
    /// Centre of the means; all ones when absent.
    pub mean_center: Option<Vec<f64>>,
    /// Variance of the means around the centre.
    pub mean_spread: f64,
    /// Diagonal level `σ_c` per class.
    pub class_sigma: [f64; 3],
    /// Range of the off-diagonal level `u` per class.
    pub u_ranges: [[f64; 2]; 3],
    pub seed: u64,
}

impl Default for ToySpec3Class {
    fn default() -> Self {
        ToySpec3Class {
            d: 2,
            n_dists: 250,
            n_samples: 30,
            mean_center: None,
            mean_spread: 5.0,
            class_sigma: [1.0; 3],
            u_ranges: [[0.0, 0.1], [0.2, 0.3], [0.4, 0.5]],
            seed: 0,
        }
    }
}

impl ToySpec3Class {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::invalid(format!(
                "d must be at least 2, got {}",
                self.d
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 samples per distribution, got {}",
                self.n_samples
            )));
        }
        if let Some(c) = &self.mean_center {
            if c.len() != self.d {
                return Err(Error::DimensionMismatch(self.d, c.len()));
            }
        }
        if !(self.mean_spread >= 0.0) || !self.mean_spread.is_finite() {
            return Err(Error::invalid(format!(
                "mean spread must be nonnegative, got {}",
                self.mean_spread
            )));
        }
        for (c, r) in self.u_ranges.iter().enumerate() {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::invalid(format!(
                    "u range of class {c} is not an interval: {r:?}"
                )));
            }
        }
        if self.class_sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("class sigmas must be positive"));
        }
        Ok(())
    }
}

/// Smallest eigenvalue of `σI + u(I₁ + I₋₁)` in dimension `d` (tridiagonal
/// Toeplitz, so the spectrum is `σ + 2u cos(kπ/(d+1))`).
pub fn tridiagonal_min_eig(sigma: f64, u: f64, d: usize) -> f64 {
    sigma - 2.0 * u.abs() * (std::f64::consts::PI / (d as f64 + 1.0)).cos()
}

pub fn tridiagonal_covariance(sigma: f64, u: f64, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            sigma
        } else if i.abs_diff(j) == 1 {
            u
        } else {
            0.0
        }
    })
}

/// Lower Cholesky factor; `None` unless every pivot exceeds [`SPD_FLOOR`].
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut s = a[[j, j]];
        for k in 0..j {
            s -= l[[j, k]] * l[[j, k]];
        }
        if !(s > SPD_FLOOR) {
            return None;
        }
        let ljj = s.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

fn standard_normal(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| StandardNormal.sample(rng))
}

/// `n` rows drawn from `N(mean, L Lᵀ)`.
fn sample_gaussian(
    rng: &mut ChaCha8Rng,
    mean: ArrayView1<f64>,
    chol: ArrayView2<f64>,
    n: usize,
) -> Array2<f64> {
    let d = mean.len();
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        let z = standard_normal(rng, d);
        row.assign(&(&mean + &chol.dot(&z)));
    }
    out
}

/// Dataset of `n_dists` empirical distributions, classes dealt round-robin.
/// Pure function of the spec.
pub fn gen_three_class(spec: &ToySpec3Class) -> Result<DistributionDataset> {
    spec.validate()?;
    let d = spec.d;
    let center = spec
        .mean_center
        .clone()
        .map(Array1::from)
        .unwrap_or_else(|| Array1::ones(d));
    let spread = spec.mean_spread.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ds = DistributionDataset::new(vec!["c0".into(), "c1".into(), "c2".into()], d);
    for k in 0..spec.n_dists {
        let class = k % 3;
        let mean = &center + &(standard_normal(&mut rng, d) * spread);
        let [lo, hi] = spec.u_ranges[class];
        let sigma = spec.class_sigma[class];
        let mut chol = None;
        for _ in 0..MAX_RESAMPLES {
            let u = if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            if tridiagonal_min_eig(sigma, u, d) > SPD_FLOOR {
                chol = cholesky(tridiagonal_covariance(sigma, u, d).view());
                if chol.is_some() {
                    break;
                }
            }
        }
        let chol = chol.ok_or_else(|| {
            Error::invalid(format!(
                "class {class}: no positive definite covariance after {MAX_RESAMPLES} draws of u in [{lo}, {hi}]"
            ))
        })?;
        let samples = sample_gaussian(&mut rng, mean.view(), chol.view(), spec.n_samples);
        ds.push(LabeledDistribution {
            payload: Distribution::Empirical(empirical_from_samples(samples.view())?),
            label: class,
        })?;
    }
    Ok(ds)
}

/// Two classes of Gaussians `N(mᵢ, Σ)` with `mᵢ ∼ N(m★_y, Σ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSepSpec {
    pub m_neg: Vec<f64>,
    pub m_pos: Vec<f64>,
    /// Covariance of the means around their class centre.
    pub sigma0: Vec<Vec<f64>>,
    /// Covariance within each distribution.
    pub sigma: Vec<Vec<f64>>,
    pub n_dists: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl MeanSepSpec {
    /// `Σ₀ = s0·I`, `Σ = s·I`.
    pub fn isotropic(
        m_neg: Vec<f64>,
        m_pos: Vec<f64>,
        s0: f64,
        s: f64,
        n_dists: usize,
        n_samples: usize,
    ) -> Self {
        let d = m_neg.len();
        let eye = |v: f64| {
            (0..d)
                .map(|i| (0..d).map(|j| if i == j { v } else { 0.0 }).collect())
                .collect()
        };
        MeanSepSpec {
            m_neg,
            m_pos,
            sigma0: eye(s0),
            sigma: eye(s),
            n_dists,
            n_samples,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m_neg.len()
    }

    /// `‖m★₋₁ − m★₊₁‖²`.
    pub fn d_star(&self) -> f64 {
        self.m_neg
            .iter()
            .zip(&self.m_pos)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn matrix(&self, rows: &[Vec<f64>], name: &str) -> Result<Array2<f64>> {
        let d = self.dim();
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(format!("{name} must be {d} x {d}")));
        }
        Ok(Array2::from_shape_fn((d, d), |(i, j)| rows[i][j]))
    }
}

/// Factor of a covariance that may be zero (a degenerate spread), or an
/// error if it is not positive semidefinite.
fn psd_factor(a: &Array2<f64>, name: &str) -> Result<Array2<f64>> {
    if a.iter().all(|&v| v == 0.0) {
        return Ok(a.clone());
    }
    cholesky(a.view()).ok_or_else(|| Error::invalid(format!("{name} is not positive definite")))
}

/// Empirical dataset and, in the same order, the true Gaussians the samples
/// were drawn from.
pub fn gen_mean_separated_with_oracle(
    spec: &MeanSepSpec,
) -> Result<(DistributionDataset, DistributionDataset)> {
    let d = spec.dim();
    if d == 0 || spec.m_pos.len() != d {
        return Err(Error::DimensionMismatch(d, spec.m_pos.len()));
    }
    if spec.n_samples < 2 {
        return Err(Error::invalid("need at least 2 samples per distribution"));
    }
    let s0 = spec.matrix(&spec.sigma0, "sigma0")?;
    let s = spec.matrix(&spec.sigma, "sigma")?;
    let l0 = psd_factor(&s0, "sigma0")?;
    let l = cholesky(s.view()).ok_or_else(|| Error::invalid("sigma is not positive definite"))?;
    let centers = [
        Array1::from(spec.m_neg.clone()),
        Array1::from(spec.m_pos.clone()),
    ];
    let codebook = vec!["-1".to_string(), "+1".to_string()];
    let mut emp = DistributionDataset::new(codebook.clone(), d);
    let mut oracle = DistributionDataset::new(codebook, d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for k in 0..spec.n_dists {
        let label = k % 2;
        let mean = &centers[label] + &l0.dot(&standard_normal(&mut rng, d));
        let samples = sample_gaussian(&mut rng, mean.view(), l.view(), spec.n_samples);
        emp.push(LabeledDistribution {
            payload: Distribution::Empirical(empirical_from_samples(samples.view())?),
            label,
        })?;
        oracle.push(LabeledDistribution {
            payload: Distribution::Gaussian(GaussianParams::new(mean, s.clone())?),
            label,
        })?;
    }
    Ok((emp, oracle))
}

pub fn gen_mean_separated(spec: &MeanSepSpec) -> Result<DistributionDataset> {
    Ok(gen_mean_separated_with_oracle(spec)?.0)
}
