use ndarray::ArrayView2;
use serde::Serialize;

use crate::dataset::DistributionDataset;
use crate::error::{Error, Result};

use super::{pairwise_matrix, DissimilaritySpec};

/// Empirical check of how well a dissimilarity separates classes at margin
/// `gamma`, with unit weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodnessReport {
    pub gamma: f64,
    /// Fraction of items whose margin falls below `gamma`.
    pub epsilon_hat: f64,
    /// Mean dissimilarity to other classes minus mean dissimilarity to the
    /// rest of the own class.
    pub per_item_margins: Vec<f64>,
}

impl GoodnessReport {
    pub fn from_margins(margins: Vec<f64>, gamma: f64) -> Self {
        let below = margins.iter().filter(|&&m| m < gamma).count();
        GoodnessReport {
            gamma,
            epsilon_hat: below as f64 / margins.len() as f64,
            per_item_margins: margins,
        }
    }
}

/// Per-item margins from a square dissimilarity matrix over all items.
pub fn item_margins(d: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    let n = labels.len();
    if d.dim() != (n, n) {
        return Err(Error::invalid(format!(
            "goodness needs a square {n} x {n} matrix, got {:?}",
            d.dim()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.len() < 2 {
        return Err(Error::DegenerateLabels(
            "goodness needs at least two classes".into(),
        ));
    }
    if present.iter().any(|&c| c < 2) {
        return Err(Error::DegenerateLabels(
            "goodness needs at least two items per class".into(),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let (mut intra, mut inter) = (0.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                if labels[j] == labels[i] {
                    intra += d[[i, j]];
                } else {
                    inter += d[[i, j]];
                }
            }
            let same = (counts[labels[i]] - 1) as f64;
            let other = (n - counts[labels[i]]) as f64;
            inter / other - intra / same
        })
        .collect())
}

pub fn goodness_from_matrix(
    d: ArrayView2<f64>,
    labels: &[usize],
    gamma: f64,
) -> Result<GoodnessReport> {
    if !gamma.is_finite() {
        return Err(Error::invalid("gamma must be finite"));
    }
    Ok(GoodnessReport::from_margins(
        item_margins(d, labels)?,
        gamma,
    ))
}

/// Goodness of `spec` on `ds`, using the clipped dissimilarities between
/// all pairs of items.
pub fn goodness_estimate(
    ds: &DistributionDataset,
    spec: &DissimilaritySpec,
    gamma: f64,
) -> Result<GoodnessReport> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let m = pairwise_matrix(ds, &all, spec)?;
    goodness_from_matrix(m.values.view(), &ds.labels(), gamma)
}
