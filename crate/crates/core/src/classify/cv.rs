//! Stratified cross-validation over a dissimilarity matrix computed once.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DistributionDataset;
use crate::embed::{
    cross_matrix, pairwise_matrix, select_templates_among, DissimilaritySpec, DistanceMatrix,
    TemplateStrategy,
};
use crate::error::{Error, Result};
use crate::ot::lower_median;

use super::kernel::{train_grbf, train_kernel_with, KernelSvmConfig};
use super::linear::{train_linear_with, LinearSvmConfig};
use super::{accuracy, predict, ModelKind, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvGrid {
    pub c_values: Vec<f64>,
    /// Gaussian-kernel bandwidths as multiples of the median distance
    /// between training feature vectors.
    pub bandwidth_factors: Vec<f64>,
    /// Generalized-RBF `σ` values as multiples of `1 / median(D²)`.
    pub grbf_sigma_factors: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            c_values: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            bandwidth_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            grbf_sigma_factors: vec![0.1, 1.0, 10.0],
            folds: 5,
            seed: 0,
        }
    }
}

impl CvGrid {
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        let positive = |name: &str, v: &[f64]| {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                Err(Error::invalid(format!(
                    "{name} must be a nonempty list of positive values"
                )))
            } else {
                Ok(())
            }
        };
        positive("C grid", &self.c_values)?;
        match kind {
            ModelKind::Linear => Ok(()),
            ModelKind::Kernel => positive("bandwidth grid", &self.bandwidth_factors),
            ModelKind::Grbf => positive("sigma grid", &self.grbf_sigma_factors),
        }
    }

    fn points(&self, kind: ModelKind) -> Vec<CvParams> {
        let scales: Vec<Option<f64>> = match kind {
            ModelKind::Linear => vec![None],
            ModelKind::Kernel => self.bandwidth_factors.iter().map(|&f| Some(f)).collect(),
            ModelKind::Grbf => self.grbf_sigma_factors.iter().map(|&f| Some(f)).collect(),
        };
        self.c_values
            .iter()
            .flat_map(|&c| scales.iter().map(move |&scale| CvParams { c, scale }))
            .collect()
    }
}

/// A grid point. `scale` is the bandwidth factor (kernel) or sigma factor
/// (generalized RBF) and is absent for linear models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvParams {
    pub c: f64,
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub params: CvParams,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub best: CvParams,
    pub table: Vec<CvRow>,
}

/// Fold id per item. Each class is shuffled and dealt round-robin, with the
/// starting fold carried over between classes so fold sizes stay level.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::ClassPopulation {
                class,
                available: members.len(),
                required: folds,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members {
            out[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(out)
}

fn take(d: ArrayView2<f64>, rows: &[usize], cols: &[usize], scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(r, c)| {
        d[[rows[r], cols[c]]] / scale
    })
}

/// Lower median of pairwise Euclidean distances between rows; 1 if all
/// rows coincide.
fn median_row_distance(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    let mut v = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            v.push(s.sqrt());
        }
    }
    positive_or_one(lower_median(&v))
}

/// Lower median of off-diagonal squared distances; 1 if all vanish.
fn median_sq_distance(d: ArrayView2<f64>) -> f64 {
    let n = d.nrows();
    let mut v = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            v.push(d[[i, j]] * d[[i, j]]);
        }
    }
    positive_or_one(lower_median(&v))
}

fn positive_or_one(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

/// Training and evaluation inputs for one split.
struct Split {
    x_train: Array2<f64>,
    y_train: Vec<usize>,
    x_test: Array2<f64>,
    y_test: Vec<usize>,
    /// Median used to turn a grid factor into a bandwidth or sigma.
    median: f64,
}

fn make_split(
    d: ArrayView2<f64>,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    templates: &[usize],
    bound_m: f64,
    kind: ModelKind,
) -> Split {
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let (x_train, x_test, median) = match kind {
        ModelKind::Grbf => {
            let xtr = take(d, train, train, 1.0);
            let med = median_sq_distance(xtr.view());
            (xtr, take(d, test, train, 1.0), med)
        }
        ModelKind::Linear | ModelKind::Kernel => {
            let xtr = take(d, train, templates, bound_m);
            let med = if kind == ModelKind::Kernel {
                median_row_distance(xtr.view())
            } else {
                1.0
            };
            (xtr, take(d, test, templates, bound_m), med)
        }
    };
    Split {
        x_train,
        y_train: pick(train),
        x_test,
        y_test: pick(test),
        median,
    }
}

fn fit(
    split: &Split,
    codebook: &[String],
    kind: ModelKind,
    p: CvParams,
    seed: u64,
) -> Result<TrainedModel> {
    let (x, y) = (split.x_train.view(), &split.y_train);
    Ok(match kind {
        ModelKind::Linear => {
            let cfg = LinearSvmConfig {
                c: p.c,
                seed,
                ..LinearSvmConfig::default()
            };
            train_linear_with(x, y, codebook, &cfg)?.0
        }
        ModelKind::Kernel => {
            let cfg = KernelSvmConfig {
                c: p.c,
                ..KernelSvmConfig::default()
            };
            let h = p.scale.expect("kernel bandwidth factor") * split.median;
            train_kernel_with(x, y, codebook, h, &cfg)?.0
        }
        ModelKind::Grbf => {
            let cfg = KernelSvmConfig {
                c: p.c,
                ..KernelSvmConfig::default()
            };
            let sigma = p.scale.expect("sigma factor") / split.median;
            train_grbf(x, y, codebook, sigma, &cfg)?.0
        }
    })
}

/// True if `a` should replace `b` as the selected grid point.
fn better(a: &CvRow, b: &CvRow, kind: ModelKind) -> bool {
    if a.mean_accuracy != b.mean_accuracy {
        return a.mean_accuracy > b.mean_accuracy;
    }
    if a.params.c != b.params.c {
        return a.params.c < b.params.c;
    }
    // Larger bandwidth means a larger kernel factor but a smaller sigma.
    match (kind, a.params.scale, b.params.scale) {
        (ModelKind::Kernel, Some(x), Some(y)) => x > y,
        (ModelKind::Grbf, Some(x), Some(y)) => x < y,
        _ => false,
    }
}

/// Cross-validation of `kind` on `ds` with `spec`. The full dissimilarity
/// matrix is computed once; in every fold the templates are chosen among
/// the training items only.
pub fn cross_validate(
    ds: &DistributionDataset,
    spec: &DissimilaritySpec,
    templates: TemplateStrategy,
    grid: &CvGrid,
    kind: ModelKind,
) -> Result<CvResult> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let d = pairwise_matrix(ds, &all, spec)?;
    cross_validate_matrix(ds, &d, templates, grid, kind)
}

/// As [`cross_validate`] on a precomputed all-pairs matrix of `ds`.
pub fn cross_validate_matrix(
    ds: &DistributionDataset,
    d: &DistanceMatrix,
    templates: TemplateStrategy,
    grid: &CvGrid,
    kind: ModelKind,
) -> Result<CvResult> {
    grid.validate(kind)?;
    let n = ds.len();
    if d.values.dim() != (n, n) {
        return Err(Error::invalid(
            "cross-validation needs the all-pairs matrix of the dataset",
        ));
    }
    let labels = ds.labels();
    let fold_of = stratified_folds(&labels, grid.folds, grid.seed)?;
    let splits: Vec<Split> = (0..grid.folds)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let tmpl =
                select_templates_among(ds, &train, templates, grid.seed.wrapping_add(f as u64))?;
            Ok(make_split(
                d.values.view(),
                &labels,
                &train,
                &test,
                &tmpl,
                d.spec.bound_m,
                kind,
            ))
        })
        .collect::<Result<_>>()?;
    let points = grid.points(kind);
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..grid.folds).map(move |f| (p, f)))
        .collect();
    let accs: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|&(p, f)| {
            let split = &splits[f];
            let model = fit(split, ds.codebook(), kind, points[p], grid.seed)?;
            accuracy(&predict(&model, split.x_test.view())?, &split.y_test)
        })
        .collect();
    let accs: Vec<f64> = accs.into_iter().collect::<Result<_>>()?;
    let table: Vec<CvRow> = points
        .iter()
        .enumerate()
        .map(|(p, &params)| {
            let fold_accuracies: Vec<f64> = accs[p * grid.folds..(p + 1) * grid.folds].to_vec();
            let mean_accuracy = fold_accuracies.iter().sum::<f64>() / grid.folds as f64;
            CvRow {
                params,
                fold_accuracies,
                mean_accuracy,
            }
        })
        .collect();
    let mut best = &table[0];
    for row in &table[1..] {
        if better(row, best, kind) {
            best = row;
        }
    }
    Ok(CvResult {
        best: best.params,
        table: table.clone(),
    })
}

/// A trained model together with everything needed to embed new items.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub model: TrainedModel,
    pub kind: ModelKind,
    pub params: CvParams,
    /// Spec with any data-dependent kernel resolved on the training set.
    pub spec: DissimilaritySpec,
    /// Template distributions; every training item for generalized RBF.
    pub templates: DistributionDataset,
    /// Positions of the templates in the training set.
    pub template_ids: Vec<usize>,
}

impl FittedPipeline {
    /// Model inputs for new items: scaled embeddings, or raw distances to
    /// the training items for generalized RBF.
    pub fn features(&self, ds: &DistributionDataset) -> Result<DistanceMatrix> {
        let all: Vec<usize> = (0..self.templates.len()).collect();
        cross_matrix(ds, &self.templates, &all, &self.spec)
    }

    pub fn predict_matrix(&self, m: &DistanceMatrix) -> Result<Vec<usize>> {
        match self.kind {
            ModelKind::Grbf => predict(&self.model, m.values.view()),
            _ => predict(&self.model, (&m.values / self.spec.bound_m).view()),
        }
    }

    pub fn predict(&self, ds: &DistributionDataset) -> Result<Vec<usize>> {
        self.predict_matrix(&self.features(ds)?)
    }

    pub fn evaluate(&self, ds: &DistributionDataset) -> Result<f64> {
        accuracy(&self.predict(ds)?, &ds.labels())
    }
}

/// Cross-validates on `train`, then refits the selected grid point on all of
/// `train`. Returns the pipeline and the CV table.
pub fn fit_pipeline(
    train: &DistributionDataset,
    spec: &DissimilaritySpec,
    templates: TemplateStrategy,
    grid: &CvGrid,
    kind: ModelKind,
) -> Result<(FittedPipeline, CvResult)> {
    let all: Vec<usize> = (0..train.len()).collect();
    let d = pairwise_matrix(train, &all, spec)?;
    let cv = cross_validate_matrix(train, &d, templates, grid, kind)?;
    let fitted = fit_pipeline_with_matrix(train, &d, templates, kind, cv.best, grid.seed)?;
    Ok((fitted, cv))
}

/// Fits one grid point on all of `train` given its all-pairs matrix.
pub fn fit_pipeline_with_matrix(
    train: &DistributionDataset,
    d: &DistanceMatrix,
    templates: TemplateStrategy,
    kind: ModelKind,
    params: CvParams,
    seed: u64,
) -> Result<FittedPipeline> {
    let n = train.len();
    if d.values.dim() != (n, n) {
        return Err(Error::invalid(
            "fitting needs the all-pairs matrix of the training set",
        ));
    }
    let all: Vec<usize> = (0..n).collect();
    let tmpl = match kind {
        ModelKind::Grbf => all.clone(),
        _ => select_templates_among(train, &all, templates, seed)?,
    };
    let labels = train.labels();
    let split = make_split(
        d.values.view(),
        &labels,
        &all,
        &[],
        &tmpl,
        d.spec.bound_m,
        kind,
    );
    let model = fit(&split, train.codebook(), kind, params, seed)?;
    Ok(FittedPipeline {
        model,
        kind,
        params,
        spec: d.spec,
        templates: train.subset(&tmpl)?,
        template_ids: tmpl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{Distribution, LabeledDistribution, PointSet};
    use crate::embed::Dissimilarity;
    use crate::ot::SinkhornConfig;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n_per_class: usize, seed: u64) -> DistributionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = DistributionDataset::new(vec!["a".into(), "b".into(), "c".into()], 2);
        for k in 0..3 * n_per_class {
            let label = k % 3;
            let shift = 2.5 * label as f64;
            let pts = Array2::from_shape_fn((10, 2), |_| rng.random::<f64>() + shift);
            ds.push(LabeledDistribution {
                payload: Distribution::Empirical(PointSet::uniform(pts).unwrap()),
                label,
            })
            .unwrap();
        }
        ds
    }

    fn spec() -> DissimilaritySpec {
        DissimilaritySpec::new(
            Dissimilarity::Wasserstein(SinkhornConfig::with_reg(0.05)),
            20.0,
        )
        .unwrap()
    }

    #[test]
    fn single_point_grid_is_selected() {
        let ds = toy(5, 1);
        let grid = CvGrid {
            c_values: vec![3.0],
            bandwidth_factors: vec![0.7],
            ..CvGrid::default()
        };
        let r = cross_validate(
            &ds,
            &spec(),
            TemplateStrategy::All,
            &grid,
            ModelKind::Kernel,
        )
        .unwrap();
        assert_eq!(
            r.best,
            CvParams {
                c: 3.0,
                scale: Some(0.7)
            }
        );
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.table[0].fold_accuracies.len(), 5);
    }

    #[test]
    fn easy_problem_is_learned_by_every_model() {
        let ds = toy(6, 2);
        for kind in [ModelKind::Linear, ModelKind::Kernel, ModelKind::Grbf] {
            let (fit, cv) = fit_pipeline(
                &ds,
                &spec(),
                TemplateStrategy::All,
                &CvGrid::default(),
                kind,
            )
            .unwrap();
            let best = cv.table.iter().map(|r| r.mean_accuracy).fold(0.0, f64::max);
            assert_eq!(best, 1.0, "{kind}");
            let test = toy(4, 3);
            assert_eq!(fit.evaluate(&test).unwrap(), 1.0, "{kind}");
        }
    }

    #[test]
    fn per_class_templates_come_from_the_training_side() {
        let ds = toy(5, 4);
        let (fit, _) = fit_pipeline(
            &ds,
            &spec(),
            TemplateStrategy::PerClass(2),
            &CvGrid::default(),
            ModelKind::Linear,
        )
        .unwrap();
        assert_eq!(fit.template_ids.len(), 6);
        assert_eq!(fit.templates.len(), 6);
    }

    #[test]
    fn ties_prefer_small_c_then_wide_bandwidth() {
        let row = |c: f64, s: f64, acc: f64| CvRow {
            params: CvParams { c, scale: Some(s) },
            fold_accuracies: vec![acc],
            mean_accuracy: acc,
        };
        assert!(better(
            &row(1.0, 1.0, 0.9),
            &row(10.0, 1.0, 0.9),
            ModelKind::Kernel
        ));
        assert!(better(
            &row(1.0, 2.0, 0.9),
            &row(1.0, 1.0, 0.9),
            ModelKind::Kernel
        ));
        assert!(better(
            &row(1.0, 0.1, 0.9),
            &row(1.0, 1.0, 0.9),
            ModelKind::Grbf
        ));
        assert!(better(
            &row(100.0, 0.1, 0.95),
            &row(1.0, 1.0, 0.9),
            ModelKind::Kernel
        ));
    }

    #[test]
    fn too_few_items_per_class() {
        let ds = toy(3, 5);
        let err = cross_validate(
            &ds,
            &spec(),
            TemplateStrategy::All,
            &CvGrid::default(),
            ModelKind::Linear,
        );
        assert!(matches!(
            err,
            Err(Error::ClassPopulation {
                available: 3,
                required: 5,
                ..
            })
        ));
    }

    proptest! {
        #[test]
        fn folds_are_stratified_and_deterministic(
            counts in proptest::collection::vec(3usize..30, 2..5),
            folds in 2usize..=3,
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
            let f = stratified_folds(&labels, folds, seed).unwrap();
            prop_assert_eq!(&f, &stratified_folds(&labels, folds, seed).unwrap());
            for (c, &k) in counts.iter().enumerate() {
                for fold in 0..folds {
                    let in_fold = (0..labels.len()).filter(|&i| labels[i] == c && f[i] == fold).count();
                    let expected = k as f64 / folds as f64;
                    prop_assert!((in_fold as f64 - expected).abs() <= 1.0);
                }
            }
        }
    }
}
