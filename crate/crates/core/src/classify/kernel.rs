//! Kernel SVMs by SMO with second-order working-set selection.
//!
//! The dual box is `[0, C/n]` as in the linear solver, with the usual
//! equality constraint `Σ αᵢ yᵢ = 0` for the bias.

use ndarray::{Array2, ArrayView2};

use crate::embed::EmbeddedDataset;
use crate::error::{Error, Result};
use crate::gaussian::sym_eigvals;

use super::{
    binary_targets, check_training_input, MachineReport, ModelParams, TrainedModel, TrainingReport,
};

/// Curvature floor for non-positive pair curvature.
const TAU: f64 = 1e-12;
/// Relative tolerance when checking a distance matrix for symmetry.
const SYMMETRY_RTOL: f64 = 1e-9;
const MAX_SHIFT_RETRIES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSvmConfig {
    pub c: f64,
    /// Stop once the maximal KKT violation is at most this.
    pub tol: f64,
    /// Pair updates before the solver counts as stalled; 0 picks
    /// `max(100 000, 100 n)`.
    pub max_iter: usize,
}

impl Default for KernelSvmConfig {
    fn default() -> Self {
        KernelSvmConfig {
            c: 1.0,
            tol: 1e-3,
            max_iter: 0,
        }
    }
}

/// `exp(−‖xᵢ − yⱼ‖² / (2h²))` between rows.
pub fn gaussian_gram(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    bandwidth: f64,
) -> Result<Array2<f64>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(x.ncols(), y.ncols()));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| {
        let s: f64 = x
            .row(i)
            .iter()
            .zip(y.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-gamma * s).exp()
    }))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )))
    }
}

/// `K[i][j] = exp(−σ D[i][j]²)` for a square symmetric nonnegative `D`.
pub fn generalized_rbf_gram(d: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
    check_sigma(sigma)?;
    let (n, m) = d.dim();
    if n != m {
        return Err(Error::invalid(format!(
            "distance matrix must be square, got {n} x {m}"
        )));
    }
    let scale = d.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (d[[i, j]] - d[[j, i]]).abs() > SYMMETRY_RTOL * scale.max(1.0) {
                return Err(Error::invalid(format!(
                    "distance matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    generalized_rbf_cross(d, sigma)
}

/// `exp(−σ D²)` elementwise for a rectangular distance matrix.
pub fn generalized_rbf_cross(d: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
    check_sigma(sigma)?;
    if let Some(v) = d.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!(
            "distances must be nonnegative, found {v}"
        )));
    }
    Ok(d.mapv(|v| (-sigma * v * v).exp()))
}

pub fn train_kernel(e: &EmbeddedDataset, c: f64, bandwidth: f64) -> Result<TrainedModel> {
    let cfg = KernelSvmConfig {
        c,
        ..KernelSvmConfig::default()
    };
    Ok(train_kernel_with(e.features(), &e.labels, &e.codebook, bandwidth, &cfg)?.0)
}

/// Gaussian-kernel SVM on feature rows.
pub fn train_kernel_with(
    x: ArrayView2<f64>,
    labels: &[usize],
    codebook: &[String],
    bandwidth: f64,
    cfg: &KernelSvmConfig,
) -> Result<(TrainedModel, TrainingReport)> {
    check_training_input(x.nrows(), labels, codebook.len(), cfg.c)?;
    let k = gaussian_gram(x, x, bandwidth)?;
    let (support, dual, biases, report) = train_on_gram(&k, labels, codebook.len(), cfg)?;
    let model = TrainedModel {
        codebook: codebook.to_vec(),
        c: cfg.c,
        params: ModelParams::Kernel {
            bandwidth,
            support_vectors: support.iter().map(|&i| x.row(i).to_vec()).collect(),
            dual,
            biases,
        },
    };
    Ok((model, report))
}

/// SVM on the kernel `exp(−σ D²)` of a training distance matrix `d`
/// (square, rows and columns in training order).
pub fn train_grbf(
    d: ArrayView2<f64>,
    labels: &[usize],
    codebook: &[String],
    sigma: f64,
    cfg: &KernelSvmConfig,
) -> Result<(TrainedModel, TrainingReport)> {
    check_training_input(d.nrows(), labels, codebook.len(), cfg.c)?;
    let k = generalized_rbf_gram(d, sigma)?;
    let (support, dual, biases, report) = train_on_gram(&k, labels, codebook.len(), cfg)?;
    let model = TrainedModel {
        codebook: codebook.to_vec(),
        c: cfg.c,
        params: ModelParams::Grbf {
            sigma,
            n_columns: d.ncols(),
            support,
            dual,
            biases,
        },
    };
    Ok((model, report))
}

type GramFit = (Vec<usize>, Vec<Vec<f64>>, Vec<f64>, TrainingReport);

/// One-vs-rest machines on a precomputed Gram matrix. Returns the union of
/// support indices, per-class coefficients `αᵢyᵢ` over that union, biases and
/// diagnostics.
fn train_on_gram(
    k: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    cfg: &KernelSvmConfig,
) -> Result<GramFit> {
    let n = labels.len();
    let mut machines = Vec::with_capacity(n_classes);
    let mut report = TrainingReport::default();
    for class in 0..n_classes {
        let y = binary_targets(labels, class);
        let (coef, bias, r) = solve_with_shift(k, &y, cfg)?;
        machines.push((coef, bias));
        report.machines.push(r);
    }
    let support: Vec<usize> = (0..n)
        .filter(|&i| machines.iter().any(|(c, _)| c[i] != 0.0))
        .collect();
    let dual = machines
        .iter()
        .map(|(c, _)| support.iter().map(|&i| c[i]).collect())
        .collect();
    let biases = machines.iter().map(|(_, b)| *b).collect();
    Ok((support, dual, biases, report))
}

/// Runs SMO; if it stalls (typically on an indefinite Gram matrix) the
/// diagonal is shifted by enough to make the matrix positive semidefinite
/// and the solve restarts, growing the shift on repeated stalls.
fn solve_with_shift(
    k: &Array2<f64>,
    y: &[f64],
    cfg: &KernelSvmConfig,
) -> Result<(Vec<f64>, f64, MachineReport)> {
    let n = y.len();
    if y.iter().all(|&v| v == y[0]) {
        let report = MachineReport {
            converged: true,
            ..MachineReport::default()
        };
        return Ok((vec![0.0; n], y[0], report));
    }
    let max_iter = if cfg.max_iter == 0 {
        (100 * n).max(100_000)
    } else {
        cfg.max_iter
    };
    let diag: Vec<f64> = (0..n).map(|i| k[[i, i]]).collect();
    let mut shift = 0.0;
    for attempt in 0..=MAX_SHIFT_RETRIES {
        let out = smo(k, &diag, shift, y, cfg.c / n as f64, cfg.tol, max_iter);
        if out.2.converged || attempt == MAX_SHIFT_RETRIES {
            if !out.2.converged {
                log::warn!(
                    "kernel svm did not reach KKT tolerance {:e} (violation {:e}, shift {shift:e})",
                    cfg.tol,
                    out.2.kkt_violation
                );
            }
            return Ok(out);
        }
        shift = if attempt == 0 {
            let lmin = sym_eigvals(k.view())?
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let floor = 1e-8 * diag.iter().sum::<f64>() / n as f64;
            (-lmin).max(0.0) + floor
        } else {
            shift * 10.0
        };
        log::warn!("kernel svm stalled; shifting the Gram diagonal by {shift:e}");
    }
    unreachable!()
}

fn smo(
    k: &Array2<f64>,
    diag: &[f64],
    shift: f64,
    y: &[f64],
    upper: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, MachineReport) {
    let n = y.len();
    let kij = |i: usize, j: usize| if i == j { diag[i] + shift } else { k[[i, j]] };
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − eᵀα with Qᵢⱼ = yᵢyⱼKᵢⱼ.
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < upper) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < upper);
    let mut iter = 0;
    let mut violation;
    loop {
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= g_max {
                g_max = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            let kii = kij(i, i);
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                g_max2 = g_max2.max(y[t] * grad[t]);
                let b = g_max + y[t] * grad[t];
                if b > 0.0 {
                    let a = kii + kij(t, t) - 2.0 * kij(i, t);
                    let a = if a > 0.0 { a } else { TAU };
                    let obj = -(b * b) / a;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        violation = g_max + g_max2;
        if violation <= tol || j_sel == usize::MAX || iter >= max_iter {
            break;
        }
        iter += 1;
        let (i, j) = (i_sel, j_sel);
        let qij = y[i] * y[j] * kij(i, j);
        let (qii, qjj) = (kij(i, i), kij(j, j));
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = qii + qjj + 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > upper {
                    alpha[i] = upper;
                    alpha[j] = upper - diff;
                }
            } else if alpha[j] > upper {
                alpha[j] = upper;
                alpha[i] = upper + diff;
            }
        } else {
            let quad = qii + qjj - 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > upper {
                if alpha[i] > upper {
                    alpha[i] = upper;
                    alpha[j] = sum - upper;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > upper {
                if alpha[j] > upper {
                    alpha[j] = upper;
                    alpha[i] = sum - upper;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * kij(t, i) * di + y[j] * kij(t, j) * dj);
        }
    }
    let converged = violation <= tol;
    // Bias: average over free vectors, else the midpoint of the feasible range.
    let (mut sum, mut n_free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < upper {
            sum += yg;
            n_free += 1;
        } else if (alpha[t] >= upper && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if n_free > 0 {
        sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let coef: Vec<f64> = alpha.iter().zip(y).map(|(a, yt)| a * yt).collect();
    let report = MachineReport {
        iterations: iter,
        kkt_violation: violation,
        dual_history: Vec::new(),
        diagonal_shift: shift,
        converged,
    };
    (coef, -rho, report)
}
