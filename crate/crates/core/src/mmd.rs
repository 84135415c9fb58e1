//! Maximum mean discrepancy with Gaussian RBF kernels.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::distribution::PointSet;
use crate::error::{Error, Result};

/// Gaussian kernel `k(x, x′) = exp(−‖x − x′‖² / (2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum KernelConfig {
    Fixed {
        bandwidth: f64,
    },
    /// Bandwidth set to the median pairwise distance of the pooled inputs.
    MedianHeuristic,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::MedianHeuristic
    }
}

impl KernelConfig {
    pub fn fixed(bandwidth: f64) -> Self {
        KernelConfig::Fixed { bandwidth }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelConfig::Fixed { bandwidth } if !(bandwidth > 0.0) || !bandwidth.is_finite() => {
                Err(Error::invalid(format!(
                    "kernel bandwidth must be positive, got {bandwidth}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Concrete bandwidth for a computation on `sets`.
    pub fn resolve(&self, sets: &[&PointSet]) -> Result<f64> {
        self.validate()?;
        match *self {
            KernelConfig::Fixed { bandwidth } => Ok(bandwidth),
            KernelConfig::MedianHeuristic => median_heuristic(sets),
        }
    }
}

/// Median of all pairwise Euclidean distances between the pooled points of
/// `sets` (the lower middle value for an even count). Coincident points are
/// included; an all-zero result is rejected since it cannot be a bandwidth.
pub fn median_heuristic(sets: &[&PointSet]) -> Result<f64> {
    let rows: Vec<ArrayView1<f64>> = sets.iter().flat_map(|s| s.points().rows()).collect();
    if rows.len() < 2 {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    let med = crate::ot::lower_median(&dists);
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::invalid(
            "median heuristic: median pairwise distance is zero",
        ))
    }
}

#[inline]
fn sq_dist(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn sq_dist_slices(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_dims(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// Kernel matrix `K[i][j] = k(aᵢ, bⱼ)`.
pub fn gram(a: &PointSet, b: &PointSet, k: &KernelConfig) -> Result<Array2<f64>> {
    check_dims(a, b)?;
    let sigma = k.resolve(&[a, b])?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (pa, pb) = (a.points(), b.points());
    Ok(Array2::from_shape_fn((a.len(), b.len()), |(i, j)| {
        (-gamma * sq_dist(pa.row(i), pb.row(j))).exp()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MmdEstimator {
    /// V-statistic; honours weights and is never negative.
    #[default]
    Biased,
    /// U-statistic with diagonals excluded; uniform weights only.
    Unbiased,
}

/// Squared MMD between two point sets.
pub fn mmd2(a: &PointSet, b: &PointSet, k: &KernelConfig, estimator: MmdEstimator) -> Result<f64> {
    check_dims(a, b)?;
    let sigma = k.resolve(&[a, b])?;
    let fa = MmdFactor::new(a, sigma, estimator)?;
    let fb = MmdFactor::new(b, sigma, estimator)?;
    fa.mmd2_to(&fb)
}

/// A point set with its within-set kernel mean cached, for evaluating MMD²
/// against many partners.
#[derive(Debug, Clone)]
pub struct MmdFactor {
    points: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
    gamma: f64,
    estimator: MmdEstimator,
    self_term: f64,
}

impl MmdFactor {
    pub fn new(set: &PointSet, bandwidth: f64, estimator: MmdEstimator) -> Result<Self> {
        KernelConfig::fixed(bandwidth).validate()?;
        let n = set.len();
        if estimator == MmdEstimator::Unbiased {
            if !set.is_uniform() {
                return Err(Error::invalid("unbiased MMD requires uniform weights"));
            }
            if n < 2 {
                return Err(Error::invalid(
                    "unbiased MMD needs at least two points per set",
                ));
            }
        }
        let std = set.points().as_standard_layout().into_owned();
        let points = std.into_raw_vec_and_offset().0;
        let weights = set.weights().to_vec();
        let dim = set.dim();
        let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
        let mut f = MmdFactor {
            points,
            weights,
            dim,
            gamma,
            estimator,
            self_term: 0.0,
        };
        f.self_term = f.within_mean();
        Ok(f)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn within_mean(&self) -> f64 {
        let n = self.len();
        // Off-diagonal pairs are counted twice by symmetry.
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let kv = (-self.gamma * sq_dist_slices(self.row(i), self.row(j))).exp();
                off += match self.estimator {
                    MmdEstimator::Biased => self.weights[i] * self.weights[j] * kv,
                    MmdEstimator::Unbiased => kv,
                };
            }
        }
        match self.estimator {
            MmdEstimator::Biased => {
                let diag: f64 = self.weights.iter().map(|w| w * w).sum();
                diag + 2.0 * off
            }
            MmdEstimator::Unbiased => 2.0 * off / (n * (n - 1)) as f64,
        }
    }

    fn cross_mean(&self, other: &MmdFactor) -> f64 {
        let mut s = 0.0;
        for i in 0..self.len() {
            let x = self.row(i);
            let mut row = 0.0;
            for j in 0..other.len() {
                let kv = (-self.gamma * sq_dist_slices(x, other.row(j))).exp();
                row += other.weights[j] * kv;
            }
            s += self.weights[i] * row;
        }
        s
    }

    pub fn mmd2_to(&self, other: &MmdFactor) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        if self.gamma != other.gamma || self.estimator != other.estimator {
            return Err(Error::invalid("MMD factors built with different kernels"));
        }
        let v = self.self_term - 2.0 * self.cross_mean(other) + other.self_term;
        Ok(match self.estimator {
            MmdEstimator::Biased => v.max(0.0),
            MmdEstimator::Unbiased => v,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// `P(|MMD − MMD̂| > ε) ≤ exp(−ε² ⌊N/2⌋ / (8K²))` for a kernel bounded by `K`,
/// clamped to `[0, 1]`.
pub fn mmd_deviation_bound(n: usize, k_bound: f64, eps: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    positive("kernel bound", k_bound)?;
    positive("eps", eps)?;
    let n2 = (n / 2) as f64;
    Ok((-eps * eps * n2 / (8.0 * k_bound * k_bound))
        .exp()
        .clamp(0.0, 1.0))
}

/// Approximate MMD² between Gaussians `N(m₁, σ²I)` and `N(m₂, σ²I)` under a
/// kernel of bandwidth `σ_k` in dimension `d`:
/// `‖m₁ − m₂‖² / (σ_k² (1 + 2σ²/σ_k²)^{d/2 + 1})`.
pub fn mmd2_gaussian_approx(
    m1: ArrayView1<f64>,
    m2: ArrayView1<f64>,
    sigma: f64,
    sigma_k: f64,
    d: usize,
) -> Result<f64> {
    positive("sigma", sigma)?;
    positive("sigma_k", sigma_k)?;
    if m1.len() != m2.len() {
        return Err(Error::DimensionMismatch(m1.len(), m2.len()));
    }
    let dm2 = sq_dist(m1, m2);
    let base = 1.0 + 2.0 * sigma * sigma / (sigma_k * sigma_k);
    Ok(dm2 / (sigma_k * sigma_k * base.powf(d as f64 / 2.0 + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointSet {
        PointSet::uniform(Array2::from_shape_fn((n, d), |_| {
            StandardNormal.sample(rng)
        }))
        .unwrap()
    }

    #[test]
    fn gram_plug_in_values() {
        let a = PointSet::uniform(array![[0.0, 0.0]]).unwrap();
        let s = 0.7f64;
        let b = PointSet::uniform(array![[s * 2f64.sqrt(), 0.0]]).unwrap();
        let k = KernelConfig::fixed(s);
        assert_eq!(gram(&a, &a, &k).unwrap()[[0, 0]], 1.0);
        assert!((gram(&a, &b, &k).unwrap()[[0, 0]] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gram_transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_set(&mut rng, 5, 3);
        let b = gaussian_set(&mut rng, 4, 3);
        let k = KernelConfig::fixed(1.3);
        let ab = gram(&a, &b, &k).unwrap();
        let ba = gram(&b, &a, &k).unwrap();
        assert_eq!(ab, ba.t());
        assert!(ab.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn diracs_hand_formula() {
        let r = 1.5f64;
        let s = 0.8f64;
        let a = PointSet::uniform(array![[0.0]]).unwrap();
        let b = PointSet::uniform(array![[r]]).unwrap();
        let got = mmd2(&a, &b, &KernelConfig::fixed(s), MmdEstimator::Biased).unwrap();
        let want = 2.0 - 2.0 * (-r * r / (2.0 * s * s)).exp();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn identical_sets_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian_set(&mut rng, 20, 4);
        let v = mmd2(&a, &a, &KernelConfig::fixed(1.0), MmdEstimator::Biased).unwrap();
        assert!(v.abs() <= 1e-12);
    }

    /// Direct expansion `‖Σ wᵢ φ(xᵢ) − Σ vⱼ φ(yⱼ)‖²` from all kernel entries.
    fn rkhs_norm_oracle(a: &PointSet, b: &PointSet, s: f64) -> f64 {
        let k = |x: ArrayView1<f64>, y: ArrayView1<f64>| (-sq_dist(x, y) / (2.0 * s * s)).exp();
        let coef: Vec<(ArrayView1<f64>, f64)> = a
            .points()
            .rows()
            .into_iter()
            .zip(a.weights().iter().copied())
            .chain(
                b.points()
                    .rows()
                    .into_iter()
                    .zip(b.weights().iter().map(|w| -w)),
            )
            .collect();
        let mut total = 0.0;
        for (x, cx) in &coef {
            for (y, cy) in &coef {
                total += cx * cy * k(*x, *y);
            }
        }
        total
    }

    #[test]
    fn biased_matches_rkhs_expansion_on_tiny_weighted_sets() {
        let a = PointSet::new(
            array![[0.0, 1.0], [1.0, 0.5], [2.0, -1.0]],
            array![0.2, 0.5, 0.3],
        )
        .unwrap();
        let b = PointSet::new(
            array![[0.5, 0.5], [1.5, 1.0], [-1.0, 0.0], [0.0, 0.0]],
            array![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let got = mmd2(&a, &b, &KernelConfig::fixed(0.9), MmdEstimator::Biased).unwrap();
        assert!((got - rkhs_norm_oracle(&a, &b, 0.9)).abs() < 1e-14);
    }

    #[test]
    fn unbiased_is_centred_under_the_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = KernelConfig::fixed(1.0);
        let vals: Vec<f64> = (0..100)
            .map(|_| {
                let a = gaussian_set(&mut rng, 15, 2);
                let b = gaussian_set(&mut rng, 15, 2);
                mmd2(&a, &b, &k, MmdEstimator::Unbiased).unwrap()
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean}, se {se}");
        assert!(
            vals.iter().any(|&v| v < 0.0),
            "U-statistic should dip below zero sometimes"
        );
    }

    #[test]
    fn unbiased_rejections() {
        let w = PointSet::new(array![[0.0], [1.0]], array![0.3, 0.7]).unwrap();
        let u = PointSet::uniform(array![[0.0], [1.0]]).unwrap();
        let one = PointSet::uniform(array![[0.0]]).unwrap();
        let k = KernelConfig::fixed(1.0);
        assert!(mmd2(&w, &u, &k, MmdEstimator::Unbiased).is_err());
        assert!(mmd2(&one, &u, &k, MmdEstimator::Unbiased).is_err());
        assert!(mmd2(&w, &u, &k, MmdEstimator::Biased).is_ok());
        assert!(mmd2(&u, &u, &KernelConfig::fixed(0.0), MmdEstimator::Biased).is_err());
    }

    #[test]
    fn median_heuristic_uses_lower_median() {
        // Pairwise distances 1, 2, 3, 1, 2, 1 -> sorted 1,1,1,2,2,3 -> lower median 1.
        let a = PointSet::uniform(array![[0.0], [1.0]]).unwrap();
        let b = PointSet::uniform(array![[2.0], [3.0]]).unwrap();
        assert_eq!(median_heuristic(&[&a, &b]).unwrap(), 1.0);
        // 0, 1, 3 in a line: distances 1, 3, 2 -> median 2.
        let c = PointSet::uniform(array![[0.0], [1.0], [3.0]]).unwrap();
        assert_eq!(median_heuristic(&[&c]).unwrap(), 2.0);
        assert_eq!(KernelConfig::MedianHeuristic.resolve(&[&c]).unwrap(), 2.0);
    }

    #[test]
    fn deviation_bound_values() {
        assert!((mmd_deviation_bound(8, 1.0, 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((mmd_deviation_bound(10, 1.0, 1e-9).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mmd_deviation_bound(1, 1.0, 1.0).unwrap(), 1.0);
        let grid: Vec<f64> = [2, 4, 10, 100, 1000]
            .iter()
            .map(|&n| mmd_deviation_bound(n, 1.0, 0.5).unwrap())
            .collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
        assert!(mmd_deviation_bound(0, 1.0, 1.0).is_err());
        assert!(mmd_deviation_bound(4, 0.0, 1.0).is_err());
        assert!(mmd_deviation_bound(4, 1.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_approx_values() {
        let z = Array1::zeros(2);
        let e1 = array![1.0, 0.0];
        assert_eq!(
            mmd2_gaussian_approx(z.view(), z.view(), 1.0, 1.0, 2).unwrap(),
            0.0
        );
        assert!(
            (mmd2_gaussian_approx(z.view(), e1.view(), 1.0, 1.0, 2).unwrap() - 1.0 / 9.0).abs()
                < 1e-15
        );
        let vals: Vec<f64> = (0..6)
            .map(|d| mmd2_gaussian_approx(z.view(), e1.view(), 0.5, 2.0, d).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(mmd2_gaussian_approx(z.view(), e1.view(), 0.0, 1.0, 2).is_err());
        assert!(mmd2_gaussian_approx(z.view(), e1.view(), 1.0, -1.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn biased_symmetric_and_nonnegative(
            xs in proptest::collection::vec(-3.0f64..3.0, 2..20),
            ys in proptest::collection::vec(-3.0f64..3.0, 2..20),
            s in 0.1f64..5.0,
        ) {
            let a = PointSet::uniform(Array2::from_shape_vec((xs.len() / 2, 2), xs[..xs.len() / 2 * 2].to_vec()).unwrap()).unwrap();
            let b = PointSet::uniform(Array2::from_shape_vec((ys.len() / 2, 2), ys[..ys.len() / 2 * 2].to_vec()).unwrap()).unwrap();
            let k = KernelConfig::fixed(s);
            let ab = mmd2(&a, &b, &k, MmdEstimator::Biased).unwrap();
            let ba = mmd2(&b, &a, &k, MmdEstimator::Biased).unwrap();
            prop_assert!(ab >= -1e-12);
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(mmd2(&a, &a, &k, MmdEstimator::Biased).unwrap().abs() <= 1e-12);
        }
    }
}
