//! Classification of probability distributions through dissimilarity
//! embeddings.
//!
//! Each distribution is mapped to the vector of its (clipped, rescaled)
//! dissimilarities to a set of template distributions, and ordinary linear or
//! kernel classifiers are trained on those vectors. Dissimilarities include
//! entropic Wasserstein distances on point sets, the closed-form
//! Bures-Wasserstein distance between Gaussians, and MMD.

pub mod classify;
pub mod dataset;
pub mod distribution;
pub mod embed;
pub mod error;
pub mod gaussian;
pub mod mmd;
pub mod ot;
pub mod toygen;

pub use dataset::{load_dataset, save_dataset, DistributionDataset};
pub use distribution::{
    as_gaussian, empirical_from_samples, gaussian_fit, Distribution, GaussianParams,
    LabeledDistribution, PayloadKind, PointSet,
};
pub use error::{Error, Result};
pub use mmd::{gram, mmd2, KernelConfig, MmdEstimator};
