//! Monte-Carlo frequencies of `D(μ, μ̂_N) > ε` for a known Gaussian `μ`,
//! next to the deviation bounds that should dominate them.

use std::io::Write;

use anyhow::{bail, Result};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use distemb::gaussian::{bures_deviation_bound, bures_wasserstein, sym_eig};
use distemb::mmd::mmd_deviation_bound;
use distemb::toygen::{cholesky, tridiagonal_covariance};
use distemb::{gaussian_fit, GaussianParams};

use crate::config::{ConcentrationConfig, ConcentrationSource};

pub const HEADER: [&str; 7] = [
    "distance",
    "n",
    "eps",
    "trials",
    "frequency",
    "bound",
    "exceeds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    /// `bures`: `W₂` between `μ` and the Gaussian fitted to the sample.
    /// `mmd`: population MMD between `μ` and the empirical sample.
    pub distance: &'static str,
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    pub frequency: f64,
    pub bound: f64,
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationOutput {
    pub rows: Vec<ConcentrationRow>,
    pub c_v: f64,
    pub c_sigma: f64,
}

pub fn target_gaussian(src: &ConcentrationSource) -> Result<GaussianParams> {
    match src {
        ConcentrationSource::Gaussian { mean, cov } => {
            let d = mean.len();
            if d == 0 || cov.len() != d || cov.iter().any(|r| r.len() != d) {
                bail!("cov must be {d} x {d}");
            }
            let cov = Array2::from_shape_fn((d, d), |(i, j)| cov[i][j]);
            Ok(GaussianParams::new(Array1::from(mean.clone()), cov)?)
        }
        ConcentrationSource::Toy { spec, class } => {
            spec.validate()?;
            if *class >= 3 {
                bail!("class must be 0, 1 or 2");
            }
            let [lo, hi] = spec.u_ranges[*class];
            let cov = tridiagonal_covariance(spec.class_sigma[*class], 0.5 * (lo + hi), spec.d);
            let mean = spec
                .mean_center
                .clone()
                .map(Array1::from)
                .unwrap_or_else(|| Array1::ones(spec.d));
            Ok(GaussianParams::new(mean, cov)?)
        }
    }
}

/// Population MMD between `N(m, Σ)` and the uniform empirical measure on
/// `samples`, for the Gaussian kernel of bandwidth `h`, using
/// `E k(x, x′) = det(I + 2Σ/h²)^{-1/2}` and
/// `E_x k(x, y) = det(I + Σ/h²)^{-1/2} exp(−½ (y−m)ᵀ(Σ + h²I)^{-1}(y−m))`.
pub fn population_mmd(g: &GaussianParams, samples: &Array2<f64>, h: f64) -> Result<f64> {
    let e = sym_eig(g.covariance().view())?;
    let h2 = h * h;
    let lam: Vec<f64> = e.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let self_term = lam
        .iter()
        .map(|l| (1.0 + 2.0 * l / h2).powf(-0.5))
        .product::<f64>();
    let cross_scale = lam
        .iter()
        .map(|l| (1.0 + l / h2).powf(-0.5))
        .product::<f64>();
    let n = samples.nrows();
    let mut cross = 0.0;
    for y in samples.rows() {
        let z = &y - g.mean();
        let proj = e.eigenvectors.t().dot(&z);
        let q: f64 = proj.iter().zip(&lam).map(|(p, l)| p * p / (l + h2)).sum();
        cross += cross_scale * (-0.5 * q).exp();
    }
    let mut within = 0.0;
    for a in samples.rows() {
        for b in samples.rows() {
            let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            within += (-s / (2.0 * h2)).exp();
        }
    }
    let nf = n as f64;
    let mmd2 = self_term - 2.0 * cross / nf + within / (nf * nf);
    Ok(mmd2.max(0.0).sqrt())
}

struct TrialDraw {
    bures: f64,
    mmd: f64,
    max_sq_norm: f64,
}

/// Runs the harness. Trial `t` at grid position `k` draws from its own
/// random stream, so the output does not depend on the worker count.
pub fn run_concentration(cfg: &ConcentrationConfig) -> Result<ConcentrationOutput> {
    cfg.validate()?;
    let g = target_gaussian(&cfg.target)?;
    let d = g.dim();
    let chol = cholesky(g.covariance().view())
        .ok_or_else(|| anyhow::anyhow!("covariance must be positive definite"))?;
    let draws: Vec<Vec<TrialDraw>> = cfg
        .n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream((k * cfg.trials + t) as u64);
                    let z = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
                    let centred = z.dot(&chol.t());
                    let samples = &centred + g.mean();
                    let max_sq_norm = centred
                        .rows()
                        .into_iter()
                        .map(|r| r.dot(&r))
                        .fold(0.0, f64::max);
                    let fit = gaussian_fit(samples.view())?;
                    Ok(TrialDraw {
                        bures: bures_wasserstein(&g, &fit)?,
                        mmd: population_mmd(&g, &samples, cfg.mmd_bandwidth)?,
                        max_sq_norm,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let c_v = match cfg.c_v {
        Some(c) => c,
        None => draws
            .iter()
            .flatten()
            .map(|t| t.max_sq_norm)
            .fold(0.0, f64::max),
    };
    let c_sigma = match cfg.c_sigma {
        Some(c) => c,
        None => sym_eig(g.covariance().view())?.eigenvalues[0],
    };
    let mut rows = Vec::new();
    for distance in ["bures", "mmd"] {
        for (k, &n) in cfg.n_grid.iter().enumerate() {
            for &eps in &cfg.eps_grid {
                let hits = draws[k]
                    .iter()
                    .filter(|t| {
                        if distance == "bures" {
                            t.bures > eps
                        } else {
                            t.mmd > eps
                        }
                    })
                    .count();
                let frequency = hits as f64 / cfg.trials as f64;
                let bound = if distance == "bures" {
                    bures_deviation_bound(n as f64, d as f64, eps, c_v, c_sigma)?
                } else {
                    mmd_deviation_bound(n, 1.0, eps)?
                };
                rows.push(ConcentrationRow {
                    distance,
                    n,
                    eps,
                    trials: cfg.trials,
                    frequency,
                    bound,
                    exceeds: frequency > bound,
                });
            }
        }
    }
    for r in rows.iter().filter(|r| r.exceeds) {
        log::warn!(
            "{} frequency {} exceeds bound {} at N={}, eps={}",
            r.distance,
            r.frequency,
            r.bound,
            r.n,
            r.eps
        );
    }
    Ok(ConcentrationOutput { rows, c_v, c_sigma })
}

pub fn write_rows<W: Write>(rows: &[ConcentrationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for r in rows {
        out.write_record([
            r.distance.to_string(),
            r.n.to_string(),
            r.eps.to_string(),
            r.trials.to_string(),
            r.frequency.to_string(),
            r.bound.to_string(),
            r.exceeds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
