//! One-vs-rest classifiers on embeddings and distance matrices, and the
//! cross-validation harness.

mod cv;
mod kernel;
mod linear;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cv::{
    cross_validate, cross_validate_matrix, fit_pipeline, fit_pipeline_with_matrix,
    stratified_folds, CvGrid, CvParams, CvResult, CvRow, FittedPipeline,
};
pub use kernel::{
    gaussian_gram, generalized_rbf_cross, generalized_rbf_gram, train_grbf, train_kernel,
    train_kernel_with, KernelSvmConfig,
};
pub use linear::{train_linear, train_linear_with, LinearSvmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Linear,
    /// Gaussian kernel on embedding vectors.
    Kernel,
    /// `exp(−σ D²)` on raw dissimilarities.
    Grbf,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "kernel" => Ok(ModelKind::Kernel),
            "grbf" => Ok(ModelKind::Grbf),
            _ => Err(Error::invalid(format!(
                "model must be linear, kernel or grbf, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Kernel => "kernel",
            ModelKind::Grbf => "grbf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    /// Decision value `w·x + b` per class.
    Linear {
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
    /// Decision value `Σᵢ dualᵢ k(svᵢ, x) + b` per class.
    Kernel {
        bandwidth: f64,
        support_vectors: Vec<Vec<f64>>,
        dual: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
    /// Decision value `Σᵢ dualᵢ exp(−σ D(x, trainᵢ)²) + b`; `support` holds
    /// column positions in the distance rows passed to [`predict`].
    Grbf {
        sigma: f64,
        n_columns: usize,
        support: Vec<usize>,
        dual: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub codebook: Vec<String>,
    pub c: f64,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Linear { .. } => ModelKind::Linear,
            ModelParams::Kernel { .. } => ModelKind::Kernel,
            ModelParams::Grbf { .. } => ModelKind::Grbf,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.codebook.len()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("model serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<model>".into(),
            offset: 0,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: byte_offset(&text, e.line(), e.column()),
            message: e.to_string(),
        })
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)) as u64
}

/// Solver diagnostics for one binary machine.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MachineReport {
    /// Epochs (linear) or pair updates (kernel).
    pub iterations: usize,
    /// Final optimality gap in the solver's own measure.
    pub kkt_violation: f64,
    /// Dual objective after each epoch; linear solver only.
    pub dual_history: Vec<f64>,
    /// Diagonal shift added to an indefinite Gram matrix; kernel solvers only.
    pub diagonal_shift: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub machines: Vec<MachineReport>,
}

/// Labels as ±1 for the one-vs-rest machine of `class`.
fn binary_targets(labels: &[usize], class: usize) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == class { 1.0 } else { -1.0 })
        .collect()
}

fn check_training_input(n_rows: usize, labels: &[usize], n_classes: usize, c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if labels.len() != n_rows {
        return Err(Error::SizeMismatch(n_rows, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!(
            "label {bad} outside codebook of {n_classes} classes"
        )));
    }
    let mut seen = vec![false; n_classes];
    for &l in labels {
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateLabels(
            "training needs at least two classes".into(),
        ));
    }
    Ok(())
}

/// Decision values, one column per class.
pub fn decision_values(model: &TrainedModel, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = features.nrows();
    let k = model.n_classes();
    let mut out = Array2::zeros((n, k));
    match &model.params {
        ModelParams::Linear { weights, biases } => {
            let d = weights.first().map_or(0, Vec::len);
            if features.ncols() != d {
                return Err(Error::DimensionMismatch(d, features.ncols()));
            }
            for (r, x) in features.rows().into_iter().enumerate() {
                for c in 0..k {
                    out[[r, c]] =
                        x.iter().zip(&weights[c]).map(|(a, b)| a * b).sum::<f64>() + biases[c];
                }
            }
        }
        ModelParams::Kernel {
            bandwidth,
            support_vectors,
            dual,
            biases,
        } => {
            let d = support_vectors.first().map_or(features.ncols(), Vec::len);
            if features.ncols() != d {
                return Err(Error::DimensionMismatch(d, features.ncols()));
            }
            let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
            for (r, x) in features.rows().into_iter().enumerate() {
                let kx: Vec<f64> = support_vectors
                    .iter()
                    .map(|sv| {
                        let s: f64 = x.iter().zip(sv).map(|(a, b)| (a - b) * (a - b)).sum();
                        (-gamma * s).exp()
                    })
                    .collect();
                for c in 0..k {
                    out[[r, c]] =
                        kx.iter().zip(&dual[c]).map(|(a, b)| a * b).sum::<f64>() + biases[c];
                }
            }
        }
        ModelParams::Grbf {
            sigma,
            n_columns,
            support,
            dual,
            biases,
        } => {
            if features.ncols() != *n_columns {
                return Err(Error::DimensionMismatch(*n_columns, features.ncols()));
            }
            for (r, x) in features.rows().into_iter().enumerate() {
                let kx: Vec<f64> = support
                    .iter()
                    .map(|&j| (-sigma * x[j] * x[j]).exp())
                    .collect();
                for c in 0..k {
                    out[[r, c]] =
                        kx.iter().zip(&dual[c]).map(|(a, b)| a * b).sum::<f64>() + biases[c];
                }
            }
        }
    }
    Ok(out)
}

/// Argmax over one-vs-rest decision values; ties go to the lowest class.
pub fn predict(model: &TrainedModel, features: ArrayView2<f64>) -> Result<Vec<usize>> {
    if features.nrows() == 0 {
        return Err(Error::invalid("nothing to predict"));
    }
    let dv = decision_values(model, features)?;
    Ok(dv
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    if pred.len() != truth.len() {
        return Err(Error::SizeMismatch(pred.len(), truth.len()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
