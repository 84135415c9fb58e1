//! Dataset loading and dissimilarity construction shared by the commands.

use std::path::Path;

use anyhow::{Context, Result};

use distemb::dataset::{load_dataset, DistributionDataset, MANIFEST_FILE};
use distemb::embed::{estimate_bound_m, Dissimilarity, DissimilaritySpec, MmdConfig};
use distemb::mmd::{KernelConfig, MmdEstimator};
use distemb::ot::SinkhornConfig;
use distemb::toygen::{load_point_cloud_dir, CloudLoadOptions};

/// A saved dataset when `path` holds a manifest, otherwise a directory of
/// point clouds with one subdirectory per class.
pub fn load_any(path: &Path, cloud: &CloudLoadOptions) -> Result<DistributionDataset> {
    if path.join(MANIFEST_FILE).is_file() {
        load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
    } else {
        load_point_cloud_dir(path, cloud)
            .with_context(|| format!("loading point clouds from {}", path.display()))
    }
}

/// Dissimilarity choice as given on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissChoice {
    pub kind: crate::config::DissKind,
    pub reg: f64,
    pub p: f64,
    /// Fixed MMD bandwidth; median heuristic when absent.
    pub bandwidth: Option<f64>,
    pub estimator: MmdEstimator,
    /// Clip ceiling; estimated when absent.
    pub bound_m: Option<f64>,
    pub squared: bool,
}

impl DissChoice {
    pub fn dissimilarity(&self) -> Dissimilarity {
        let wd = SinkhornConfig {
            reg: self.reg,
            p: self.p,
            ..SinkhornConfig::default()
        };
        let mmd = MmdConfig {
            kernel: self
                .bandwidth
                .map_or(KernelConfig::MedianHeuristic, KernelConfig::fixed),
            estimator: self.estimator,
        };
        crate::config::dissimilarity(self.kind, &wd, &mmd)
    }

    /// Full spec, estimating `M` on `ds` when it was not given.
    pub fn spec(
        &self,
        ds: &DistributionDataset,
        bound_pairs: usize,
        seed: u64,
    ) -> Result<DissimilaritySpec> {
        let kind = self.dissimilarity();
        let bound_m = match self.bound_m {
            Some(m) => m,
            None => {
                let m = estimate_bound_m(ds, &kind, self.squared, bound_pairs, seed)?;
                log::info!("estimated M = {m} for {}", kind.name());
                m
            }
        };
        let mut spec = DissimilaritySpec::new(kind, bound_m)?;
        spec.squared = self.squared;
        Ok(spec)
    }
}
