//! L1-hinge linear SVM by dual coordinate descent.
//!
//! Each binary machine minimizes `½‖w‖² + (C/n) Σᵢ max(0, 1 − yᵢ(w·xᵢ + b))`
//! with the bias folded in as a constant unit feature, so the dual box is
//! `[0, C/n]`.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddedDataset;
use crate::error::Result;

use super::{
    binary_targets, check_training_input, MachineReport, ModelParams, TrainedModel, TrainingReport,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSvmConfig {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LinearSvmConfig {
    fn default() -> Self {
        LinearSvmConfig {
            c: 1.0,
            max_epochs: 20_000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

pub fn train_linear(e: &EmbeddedDataset, c: f64) -> Result<TrainedModel> {
    let cfg = LinearSvmConfig {
        c,
        ..LinearSvmConfig::default()
    };
    Ok(train_linear_with(e.features(), &e.labels, &e.codebook, &cfg)?.0)
}

pub fn train_linear_with(
    x: ArrayView2<f64>,
    labels: &[usize],
    codebook: &[String],
    cfg: &LinearSvmConfig,
) -> Result<(TrainedModel, TrainingReport)> {
    check_training_input(x.nrows(), labels, codebook.len(), cfg.c)?;
    let x = x.as_standard_layout();
    let x = x.as_slice().expect("standard layout");
    let d = if labels.is_empty() {
        0
    } else {
        x.len() / labels.len()
    };
    let mut weights = Vec::with_capacity(codebook.len());
    let mut biases = Vec::with_capacity(codebook.len());
    let mut report = TrainingReport::default();
    for class in 0..codebook.len() {
        let y = binary_targets(labels, class);
        let (w, b, r) = solve_binary(x, d, &y, cfg);
        weights.push(w);
        biases.push(b);
        report.machines.push(r);
    }
    let model = TrainedModel {
        codebook: codebook.to_vec(),
        c: cfg.c,
        params: ModelParams::Linear { weights, biases },
    };
    Ok((model, report))
}

fn solve_binary(
    x: &[f64],
    d: usize,
    y: &[f64],
    cfg: &LinearSvmConfig,
) -> (Vec<f64>, f64, MachineReport) {
    let n = y.len();
    if y.iter().all(|&v| v == y[0]) {
        // Nothing to separate: constant machine.
        let report = MachineReport {
            converged: true,
            ..MachineReport::default()
        };
        return (vec![0.0; d], y[0], report);
    }
    let upper = cfg.c / n as f64;
    let row = |i: usize| &x[i * d..(i + 1) * d];
    // Last entry of `w` is the bias weight.
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let q_diag: Vec<f64> = (0..n)
        .map(|i| row(i).iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut gap = f64::INFINITY;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let xi = row(i);
            let wx: f64 = xi.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>() + w[d];
            let g = y[i] * wx - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, upper);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    for (wk, xk) in w[..d].iter_mut().zip(xi) {
                        *wk += step * xk;
                    }
                    w[d] += step;
                }
            }
        }
        let wnorm: f64 = w.iter().map(|v| v * v).sum();
        history.push(alpha.iter().sum::<f64>() - 0.5 * wnorm);
        gap = pg_max - pg_min;
        if gap < cfg.tol {
            break;
        }
    }
    let converged = gap < cfg.tol;
    if !converged {
        log::warn!("linear svm stopped after {epochs} epochs with gradient gap {gap:e}");
    }
    let b = w.pop().expect("bias entry");
    let report = MachineReport {
        iterations: epochs,
        kkt_violation: gap,
        dual_history: history,
        diagonal_shift: 0.0,
        converged,
    };
    (w, b, report)
}
