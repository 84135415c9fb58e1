//! Dissimilarity embeddings: each distribution becomes the vector of its
//! clipped, rescaled dissimilarities to a set of template distributions.

mod goodness;
mod theory;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DistributionDataset;
use crate::distribution::{as_gaussian, Distribution, PointSet};
use crate::error::{Error, Result};
use crate::gaussian::BuresFactor;
use crate::mmd::{self, KernelConfig, MmdEstimator, MmdFactor};
use crate::ot::{self, SinkhornConfig};

pub use goodness::{goodness_estimate, goodness_from_matrix, item_margins, GoodnessReport};
pub use theory::{
    margin_theory, sample_complexity_empirical, sample_complexity_population,
    sample_condition_holds, ConcentrationBound,
};

/// Cap on pooled points used by the dataset-level median heuristic.
pub const MEDIAN_POOL_CAP: usize = 1000;

/// Percentile used by [`estimate_bound_m`].
pub const BOUND_PERCENTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MmdConfig {
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub estimator: MmdEstimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Dissimilarity {
    Wasserstein(SinkhornConfig),
    /// Closed-form Gaussian `W₂`; point sets are Gaussian-fitted first.
    Bures,
    /// `MMD`, the square root of the (clamped) MMD² estimate.
    Mmd(MmdConfig),
}

impl Dissimilarity {
    pub fn name(&self) -> &'static str {
        match self {
            Dissimilarity::Wasserstein(_) => "wd",
            Dissimilarity::Bures => "bures",
            Dissimilarity::Mmd(_) => "mmd",
        }
    }

    fn self_distance_is_zero(&self) -> bool {
        match self {
            Dissimilarity::Wasserstein(_) => false,
            Dissimilarity::Bures => true,
            Dissimilarity::Mmd(c) => c.estimator == MmdEstimator::Biased,
        }
    }
}

/// A dissimilarity together with its clip ceiling `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissimilaritySpec {
    #[serde(flatten)]
    pub kind: Dissimilarity,
    pub bound_m: f64,
    /// Use `D²` instead of `D`.
    #[serde(default)]
    pub squared: bool,
}

impl DissimilaritySpec {
    pub fn new(kind: Dissimilarity, bound_m: f64) -> Result<Self> {
        let s = DissimilaritySpec {
            kind,
            bound_m,
            squared: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bound_m > 0.0) || !self.bound_m.is_finite() {
            return Err(Error::invalid(format!(
                "bound M must be positive and finite, got {}",
                self.bound_m
            )));
        }
        match &self.kind {
            Dissimilarity::Wasserstein(cfg) => cfg.validate(),
            Dissimilarity::Bures => Ok(()),
            Dissimilarity::Mmd(c) => c.kernel.validate(),
        }
    }

    /// Replaces a median-heuristic kernel by the fixed bandwidth computed on
    /// `ds` (restricted to `indices`), so every pair shares one kernel.
    pub fn resolved(&self, ds: &DistributionDataset, indices: &[usize]) -> Result<Self> {
        let mut out = *self;
        if let Dissimilarity::Mmd(ref mut c) = out.kind {
            if c.kernel == KernelConfig::MedianHeuristic {
                c.kernel = KernelConfig::fixed(pooled_median_bandwidth(ds, indices)?);
            }
        }
        Ok(out)
    }
}

/// Median heuristic over the pooled points of the selected items, thinned by
/// a fixed stride to at most [`MEDIAN_POOL_CAP`] points.
pub fn pooled_median_bandwidth(ds: &DistributionDataset, indices: &[usize]) -> Result<f64> {
    let mut rows: Vec<f64> = Vec::new();
    let mut total = 0usize;
    for &i in indices {
        total += point_set_of(ds, i, "mmd")?.len();
    }
    let stride = total.div_ceil(MEDIAN_POOL_CAP).max(1);
    let mut k = 0usize;
    for &i in indices {
        for row in point_set_of(ds, i, "mmd")?.points().rows() {
            if k % stride == 0 {
                rows.extend(row.iter());
            }
            k += 1;
        }
    }
    let d = ds.dimension();
    let n = rows.len() / d.max(1);
    let pooled = PointSet::uniform(Array2::from_shape_vec((n, d), rows).expect("row-major pool"))?;
    mmd::median_heuristic(&[&pooled])
}

fn check_index(ds: &DistributionDataset, i: usize) -> Result<()> {
    if i >= ds.len() {
        return Err(Error::invalid(format!(
            "item index {i} out of range for {} items",
            ds.len()
        )));
    }
    Ok(())
}

fn point_set_of<'a>(ds: &'a DistributionDataset, i: usize, what: &str) -> Result<&'a PointSet> {
    check_index(ds, i)?;
    ds.items()[i]
        .payload
        .as_point_set()
        .ok_or_else(|| Error::IncompatiblePayload {
            index: i,
            reason: format!("{what} needs a point set, found Gaussian parameters"),
        })
}

/// Per-item data prepared once and shared by every pair the item is in.
enum Prepared<'a> {
    Points(&'a PointSet),
    Gaussian {
        mean: Array1<f64>,
        factor: BuresFactor,
    },
    Mmd(MmdFactor),
}

fn prepare<'a>(dist: &'a Distribution, index: usize, kind: &Dissimilarity) -> Result<Prepared<'a>> {
    let incompatible = |reason: String| Error::IncompatiblePayload { index, reason };
    match kind {
        Dissimilarity::Wasserstein(_) => match dist {
            Distribution::Empirical(p) => Ok(Prepared::Points(p)),
            Distribution::Gaussian(_) => Err(incompatible("wasserstein needs a point set".into())),
        },
        Dissimilarity::Bures => {
            let g =
                as_gaussian(dist).map_err(|e| incompatible(format!("gaussian fit failed: {e}")))?;
            let factor = BuresFactor::new(g.covariance().view())?;
            Ok(Prepared::Gaussian {
                mean: g.mean().clone(),
                factor,
            })
        }
        Dissimilarity::Mmd(c) => match dist {
            Distribution::Empirical(p) => {
                let KernelConfig::Fixed { bandwidth } = c.kernel else {
                    return Err(Error::invalid(
                        "MMD kernel must be resolved before pairwise evaluation",
                    ));
                };
                MmdFactor::new(p, bandwidth, c.estimator)
                    .map_err(|e| incompatible(e.to_string()))
                    .map(Prepared::Mmd)
            }
            Distribution::Gaussian(_) => Err(incompatible("mmd needs a point set".into())),
        },
    }
}

struct PairValue {
    value: f64,
    converged: bool,
    seconds: f64,
}

fn evaluate(a: &Prepared, b: &Prepared, kind: &Dissimilarity) -> Result<PairValue> {
    let start = Instant::now();
    let (value, converged) = match (a, b, kind) {
        (Prepared::Points(x), Prepared::Points(y), Dissimilarity::Wasserstein(cfg)) => {
            let out = ot::wasserstein_detailed(x, y, cfg)?;
            (out.value, out.converged)
        }
        (
            Prepared::Gaussian {
                mean: m1,
                factor: f1,
            },
            Prepared::Gaussian {
                mean: m2,
                factor: f2,
            },
            _,
        ) => {
            let dm: f64 = m1
                .iter()
                .zip(m2.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let b = f1.bures_to(f2)?;
            ((dm + b * b).sqrt(), true)
        }
        (Prepared::Mmd(x), Prepared::Mmd(y), _) => (x.mmd2_to(y)?.max(0.0).sqrt(), true),
        _ => unreachable!("items are prepared for the same dissimilarity"),
    };
    Ok(PairValue {
        value,
        converged,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Counters from a bulk evaluation. Timings vary between runs; everything
/// else is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalStats {
    pub evaluations: usize,
    pub clipped: usize,
    pub not_converged: usize,
    /// Sum of per-evaluation wall times.
    pub eval_seconds: f64,
}

impl EvalStats {
    pub fn seconds_per_evaluation(&self) -> f64 {
        if self.evaluations == 0 {
            0.0
        } else {
            self.eval_seconds / self.evaluations as f64
        }
    }
}

/// Dissimilarities of a set of row items to a set of templates, clipped at
/// `spec.bound_m`.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<usize>,
    pub template_ids: Vec<usize>,
    /// Spec with any median-heuristic kernel already resolved.
    pub spec: DissimilaritySpec,
    pub stats: EvalStats,
}

impl DistanceMatrix {
    /// CSV with an `item` column followed by one column per template id.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["item".to_string()];
        header.extend(self.template_ids.iter().map(|t| t.to_string()));
        out.write_record(&header).map_err(csv_err)?;
        for (r, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![self.row_ids[r].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Sub-matrix of the given row and column positions.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> DistanceMatrix {
        let values = Array2::from_shape_fn((rows.len(), cols.len()), |(r, c)| {
            self.values[[rows[r], cols[c]]]
        });
        DistanceMatrix {
            values,
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            template_ids: cols.iter().map(|&c| self.template_ids[c]).collect(),
            spec: self.spec,
            stats: EvalStats::default(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv write failed: {e}"))
}

fn prepare_items<'a>(
    ds: &'a DistributionDataset,
    needed: &[usize],
    kind: &Dissimilarity,
) -> Result<Vec<Option<Prepared<'a>>>> {
    let mut mark = vec![false; ds.len()];
    for &i in needed {
        check_index(ds, i)?;
        mark[i] = true;
    }
    let prepared: Vec<Result<Option<Prepared>>> = ds
        .items()
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            if mark[i] {
                prepare(&item.payload, i, kind).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect();
    prepared.into_iter().collect()
}

fn finish_value(v: f64, spec: &DissimilaritySpec) -> f64 {
    if spec.squared {
        v * v
    } else {
        v
    }
}

/// Evaluates `pairs` in parallel. Results come back in input order and the
/// first failing pair (in that order) decides the error.
fn evaluate_pairs(
    rows: &[Option<Prepared>],
    cols: &[Option<Prepared>],
    pairs: &[(usize, usize)],
    kind: &Dissimilarity,
) -> Result<Vec<PairValue>> {
    let results: Vec<Result<PairValue>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let a = rows[i].as_ref().expect("row prepared");
            let b = cols[j].as_ref().expect("column prepared");
            evaluate(a, b, kind).map_err(|e| {
                log::error!("dissimilarity between items {i} and {j} failed: {e}");
                e
            })
        })
        .collect();
    results.into_iter().collect()
}

fn assemble(
    n_rows: usize,
    n_cols: usize,
    lookup: impl Fn(usize, usize) -> Option<usize>,
    values: &[PairValue],
    spec: &DissimilaritySpec,
) -> (Array2<f64>, EvalStats) {
    let mut stats = EvalStats {
        evaluations: values.len(),
        ..EvalStats::default()
    };
    for v in values {
        stats.eval_seconds += v.seconds;
        if !v.converged {
            stats.not_converged += 1;
        }
    }
    let mut out = Array2::zeros((n_rows, n_cols));
    for r in 0..n_rows {
        for c in 0..n_cols {
            let raw = match lookup(r, c) {
                Some(k) => finish_value(values[k].value, spec),
                None => 0.0,
            };
            if raw > spec.bound_m {
                stats.clipped += 1;
            }
            out[[r, c]] = raw.min(spec.bound_m);
        }
    }
    if stats.not_converged > 0 {
        log::warn!(
            "{} of {} sinkhorn evaluations stopped before reaching tolerance",
            stats.not_converged,
            stats.evaluations
        );
    }
    (out, stats)
}

/// Dissimilarities of every item of `ds` to the templates `templates`
/// (indices into `ds`). Pairs are evaluated once each; for dissimilarities
/// that vanish on identical inputs the self-pairs are exactly zero.
pub fn pairwise_matrix(
    ds: &DistributionDataset,
    templates: &[usize],
    spec: &DissimilaritySpec,
) -> Result<DistanceMatrix> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    pairwise_rows(ds, &rows, templates, spec)
}

/// As [`pairwise_matrix`] restricted to the row items `rows`.
pub fn pairwise_rows(
    ds: &DistributionDataset,
    rows: &[usize],
    templates: &[usize],
    spec: &DissimilaritySpec,
) -> Result<DistanceMatrix> {
    spec.validate()?;
    if templates.is_empty() {
        return Err(Error::invalid("template set is empty"));
    }
    let spec = spec.resolved(ds, templates)?;
    let mut needed: Vec<usize> = rows.iter().chain(templates).copied().collect();
    needed.sort_unstable();
    needed.dedup();
    let prepared = prepare_items(ds, &needed, &spec.kind)?;

    let zero_diag = spec.kind.self_distance_is_zero();
    let key = |i: usize, t: usize| if i <= t { (i, t) } else { (t, i) };
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(rows.len() * templates.len());
    for &i in rows {
        for &t in templates {
            if !(zero_diag && i == t) {
                pairs.push(key(i, t));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let values = evaluate_pairs(&prepared, &prepared, &pairs, &spec.kind)?;
    let lookup = |r: usize, c: usize| {
        let (i, t) = (rows[r], templates[c]);
        if zero_diag && i == t {
            None
        } else {
            Some(pairs.binary_search(&key(i, t)).expect("pair evaluated"))
        }
    };
    let (values, stats) = assemble(rows.len(), templates.len(), lookup, &values, &spec);
    Ok(DistanceMatrix {
        values,
        row_ids: rows.to_vec(),
        template_ids: templates.to_vec(),
        spec,
        stats,
    })
}

/// Dissimilarities of every item of `rows_ds` to templates drawn from a
/// different dataset (for instance test items against training templates).
/// A median-heuristic kernel is resolved on the template side.
pub fn cross_matrix(
    rows_ds: &DistributionDataset,
    template_ds: &DistributionDataset,
    templates: &[usize],
    spec: &DissimilaritySpec,
) -> Result<DistanceMatrix> {
    spec.validate()?;
    if templates.is_empty() {
        return Err(Error::invalid("template set is empty"));
    }
    if rows_ds.dimension() != template_ds.dimension() {
        return Err(Error::DimensionMismatch(
            rows_ds.dimension(),
            template_ds.dimension(),
        ));
    }
    let spec = spec.resolved(template_ds, templates)?;
    let all_rows: Vec<usize> = (0..rows_ds.len()).collect();
    let row_prep = prepare_items(rows_ds, &all_rows, &spec.kind)?;
    let col_prep = prepare_items(template_ds, templates, &spec.kind)?;
    let pairs: Vec<(usize, usize)> = all_rows
        .iter()
        .flat_map(|&i| templates.iter().map(move |&t| (i, t)))
        .collect();
    let values = evaluate_pairs(&row_prep, &col_prep, &pairs, &spec.kind)?;
    let m = templates.len();
    let (values, stats) = assemble(all_rows.len(), m, |r, c| Some(r * m + c), &values, &spec);
    Ok(DistanceMatrix {
        values,
        row_ids: all_rows,
        template_ids: templates.to_vec(),
        spec,
        stats,
    })
}

/// Feature vectors `D(item, template) / M`, all in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct EmbeddedDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub codebook: Vec<String>,
    pub template_ids: Vec<usize>,
    pub spec: DissimilaritySpec,
}

impl EmbeddedDataset {
    /// Scales a distance matrix whose rows are items of `ds`.
    pub fn from_matrix(matrix: &DistanceMatrix, ds: &DistributionDataset) -> Result<Self> {
        let labels = matrix
            .row_ids
            .iter()
            .map(|&i| {
                check_index(ds, i)?;
                Ok(ds.items()[i].label)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddedDataset {
            features: &matrix.values / matrix.spec.bound_m,
            labels,
            codebook: ds.codebook().to_vec(),
            template_ids: matrix.template_ids.clone(),
            spec: matrix.spec,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    /// CSV with one `t<id>` column per template followed by `label`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.template_ids.iter().map(|t| format!("t{t}")).collect();
        header.push("label".into());
        out.write_record(&header).map_err(csv_err)?;
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub fn embed(
    ds: &DistributionDataset,
    templates: &[usize],
    spec: &DissimilaritySpec,
) -> Result<EmbeddedDataset> {
    EmbeddedDataset::from_matrix(&pairwise_matrix(ds, templates, spec)?, ds)
}

/// Embeds `rows_ds` against templates of `template_ds`.
pub fn embed_against(
    rows_ds: &DistributionDataset,
    template_ds: &DistributionDataset,
    templates: &[usize],
    spec: &DissimilaritySpec,
) -> Result<EmbeddedDataset> {
    EmbeddedDataset::from_matrix(
        &cross_matrix(rows_ds, template_ds, templates, spec)?,
        rows_ds,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum TemplateStrategy {
    #[default]
    All,
    PerClass(usize),
}

impl fmt::Display for TemplateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateStrategy::All => write!(f, "all"),
            TemplateStrategy::PerClass(k) => write!(f, "per-class:{k}"),
        }
    }
}

impl FromStr for TemplateStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TemplateStrategy::All);
        }
        match s.strip_prefix("per-class:").map(str::parse::<usize>) {
            Some(Ok(k)) if k > 0 => Ok(TemplateStrategy::PerClass(k)),
            _ => Err(Error::invalid(format!(
                "template strategy must be `all` or `per-class:<k>`, got `{s}`"
            ))),
        }
    }
}

impl TryFrom<String> for TemplateStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TemplateStrategy> for String {
    fn from(t: TemplateStrategy) -> String {
        t.to_string()
    }
}

/// Template indices into `ds`, ascending. `PerClass(k)` draws `k` items of
/// every class without replacement.
pub fn select_templates(
    ds: &DistributionDataset,
    strategy: TemplateStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    select_templates_among(ds, &(0..ds.len()).collect::<Vec<_>>(), strategy, seed)
}

/// As [`select_templates`] but only among the items `pool`.
pub fn select_templates_among(
    ds: &DistributionDataset,
    pool: &[usize],
    strategy: TemplateStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    for &i in pool {
        check_index(ds, i)?;
    }
    match strategy {
        TemplateStrategy::All => {
            let mut out = pool.to_vec();
            out.sort_unstable();
            Ok(out)
        }
        TemplateStrategy::PerClass(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(k * ds.n_classes());
            for class in 0..ds.n_classes() {
                let mut members: Vec<usize> = pool
                    .iter()
                    .copied()
                    .filter(|&i| ds.items()[i].label == class)
                    .collect();
                members.sort_unstable();
                if members.len() < k {
                    return Err(Error::ClassPopulation {
                        class: class,
                        available: members.len(),
                        required: k,
                    });
                }
                out.extend(
                    sample(&mut rng, members.len(), k)
                        .into_iter()
                        .map(|j| members[j]),
                );
            }
            out.sort_unstable();
            Ok(out)
        }
    }
}

/// Default clip ceiling: the 99th percentile (nearest rank) of the
/// dissimilarity over `n_pairs` random distinct pairs of `ds`.
pub fn estimate_bound_m(
    ds: &DistributionDataset,
    kind: &Dissimilarity,
    squared: bool,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if ds.len() < 2 {
        return Err(Error::invalid("need at least two items to estimate M"));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be positive"));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let probe = DissimilaritySpec {
        kind: *kind,
        bound_m: f64::MAX,
        squared,
    };
    let probe = probe.resolved(ds, &all)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = (0..n_pairs)
        .map(|_| {
            let i = rng.random_range(0..ds.len());
            let mut j = rng.random_range(0..ds.len() - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect();
    let mut needed: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    needed.sort_unstable();
    needed.dedup();
    let prepared = prepare_items(ds, &needed, &probe.kind)?;
    let values = evaluate_pairs(&prepared, &prepared, &pairs, &probe.kind)?;
    let mut v: Vec<f64> = values
        .iter()
        .map(|p| finish_value(p.value, &probe))
        .collect();
    v.sort_by(f64::total_cmp);
    let rank = ((BOUND_PERCENTILE * v.len() as f64).ceil() as usize).clamp(1, v.len());
    let m = v[rank - 1];
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::invalid(
            "all sampled dissimilarities are zero; set M explicitly",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{GaussianParams, LabeledDistribution};
    use crate::gaussian::bures_wasserstein;
    use ndarray::array;
    use rand_distr::{Distribution as _, StandardNormal};

    fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> PointSet {
        PointSet::uniform(Array2::from_shape_fn((n, d), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z + shift
        }))
        .unwrap()
    }

    fn toy(n_per_class: usize, seed: u64) -> DistributionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = DistributionDataset::new(vec!["a".into(), "b".into()], 2);
        for k in 0..2 * n_per_class {
            let label = k % 2;
            let payload = Distribution::Empirical(cloud(&mut rng, 12, 2, 3.0 * label as f64));
            ds.push(LabeledDistribution { payload, label }).unwrap();
        }
        ds
    }

    fn wd_spec(m: f64) -> DissimilaritySpec {
        DissimilaritySpec::new(
            Dissimilarity::Wasserstein(SinkhornConfig::with_reg(0.05)),
            m,
        )
        .unwrap()
    }

    #[test]
    fn matrix_matches_individual_distances() {
        let ds = toy(2, 1);
        let ds = ds.subset(&[0, 1, 2]).unwrap();
        let spec = wd_spec(100.0);
        let m = pairwise_matrix(&ds, &[0, 2], &spec).unwrap();
        assert_eq!(m.values.dim(), (3, 2));
        let cfg = SinkhornConfig::with_reg(0.05);
        for (r, item) in ds.items().iter().enumerate() {
            for (c, &t) in [0usize, 2].iter().enumerate() {
                let a = item.payload.as_point_set().unwrap();
                let b = ds.items()[t].payload.as_point_set().unwrap();
                assert_eq!(m.values[[r, c]], ot::wasserstein(a, b, &cfg).unwrap());
            }
        }
    }

    #[test]
    fn entries_are_clipped() {
        let ds = toy(3, 2);
        let all: Vec<usize> = (0..ds.len()).collect();
        let m = pairwise_matrix(&ds, &all, &wd_spec(1.5)).unwrap();
        assert!(m.values.iter().all(|&v| (0.0..=1.5).contains(&v)));
        assert!(m.stats.clipped > 0);
        let e = embed(&ds, &all, &wd_spec(1.5)).unwrap();
        assert!(e.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn symmetric_when_templates_are_all_items() {
        let ds = toy(3, 3);
        let all: Vec<usize> = (0..ds.len()).collect();
        let m = pairwise_matrix(&ds, &all, &wd_spec(100.0)).unwrap();
        assert_eq!(m.values, m.values.t());
        assert_eq!(m.stats.evaluations, all.len() * (all.len() + 1) / 2);
    }

    #[test]
    fn bures_self_column_is_exactly_zero() {
        let ds = toy(3, 4);
        let spec = DissimilaritySpec::new(Dissimilarity::Bures, 50.0).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let m = pairwise_matrix(&ds, &all, &spec).unwrap();
        for i in 0..ds.len() {
            assert_eq!(m.values[[i, i]], 0.0);
        }
        let g0 = as_gaussian(&ds.items()[0].payload).unwrap();
        let g1 = as_gaussian(&ds.items()[1].payload).unwrap();
        assert!((m.values[[0, 1]] - bures_wasserstein(&g0, &g1).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn mmd_uses_one_dataset_bandwidth() {
        let ds = toy(3, 5);
        let spec = DissimilaritySpec::new(Dissimilarity::Mmd(MmdConfig::default()), 2.0).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let m = pairwise_matrix(&ds, &all, &spec).unwrap();
        let Dissimilarity::Mmd(c) = m.spec.kind else {
            panic!()
        };
        let KernelConfig::Fixed { bandwidth } = c.kernel else {
            panic!("kernel not resolved")
        };
        let a = ds.items()[0].payload.as_point_set().unwrap();
        let b = ds.items()[1].payload.as_point_set().unwrap();
        let direct = mmd::mmd2(a, b, &c.kernel, MmdEstimator::Biased)
            .unwrap()
            .sqrt();
        assert!(bandwidth > 0.0);
        assert!((m.values[[0, 1]] - direct).abs() < 1e-12);
        assert_eq!(m.values[[2, 2]], 0.0);
    }

    #[test]
    fn incompatible_payload_names_the_item() {
        let mut ds = toy(1, 6);
        let g = GaussianParams::new(array![0.0, 0.0], Array2::eye(2)).unwrap();
        ds.push(LabeledDistribution {
            payload: Distribution::Gaussian(g),
            label: 0,
        })
        .unwrap();
        let err = pairwise_matrix(&ds, &[0], &wd_spec(10.0)).unwrap_err();
        assert!(
            matches!(err, Error::IncompatiblePayload { index: 2, .. }),
            "{err}"
        );
        let bures = DissimilaritySpec::new(Dissimilarity::Bures, 10.0).unwrap();
        assert!(pairwise_matrix(&ds, &[0], &bures).is_ok());
    }

    #[test]
    fn reordering_permutes_rows_and_columns() {
        let ds = toy(3, 7);
        let perm = [4usize, 0, 5, 2, 1, 3];
        let shuffled = ds.subset(&perm).unwrap();
        let spec = wd_spec(100.0);
        let all: Vec<usize> = (0..ds.len()).collect();
        let e1 = embed(&ds, &all, &spec).unwrap();
        let e2 = embed(&shuffled, &all, &spec).unwrap();
        for (r, &pr) in perm.iter().enumerate() {
            for (c, &pc) in perm.iter().enumerate() {
                assert_eq!(e2.features[[r, c]], e1.features[[pr, pc]]);
            }
            assert_eq!(e2.labels[r], e1.labels[pr]);
        }
    }

    #[test]
    fn cross_matrix_agrees_with_pairwise() {
        let ds = toy(3, 8);
        let spec = wd_spec(100.0);
        let test = ds.subset(&[1, 4]).unwrap();
        let cross = cross_matrix(&test, &ds, &[0, 3, 5], &spec).unwrap();
        let full = pairwise_matrix(&ds, &[0, 3, 5], &spec).unwrap();
        assert_eq!(cross.values.row(0), full.values.row(1));
        assert_eq!(cross.values.row(1), full.values.row(4));
    }

    #[test]
    fn template_selection() {
        let ds = toy(10, 9);
        assert_eq!(
            select_templates(&ds, TemplateStrategy::All, 0)
                .unwrap()
                .len(),
            20
        );
        let t = select_templates(&ds, TemplateStrategy::PerClass(3), 42).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.iter().filter(|&&i| ds.items()[i].label == 0).count(), 3);
        assert_eq!(
            t,
            select_templates(&ds, TemplateStrategy::PerClass(3), 42).unwrap()
        );
        assert!(matches!(
            select_templates(&ds, TemplateStrategy::PerClass(11), 0),
            Err(Error::ClassPopulation {
                available: 10,
                required: 11,
                ..
            })
        ));
    }

    #[test]
    fn template_strategy_parsing() {
        assert_eq!(
            "all".parse::<TemplateStrategy>().unwrap(),
            TemplateStrategy::All
        );
        assert_eq!(
            "per-class:4".parse::<TemplateStrategy>().unwrap(),
            TemplateStrategy::PerClass(4)
        );
        assert!("per-class:0".parse::<TemplateStrategy>().is_err());
        assert!("some".parse::<TemplateStrategy>().is_err());
        assert_eq!(TemplateStrategy::PerClass(2).to_string(), "per-class:2");
    }

    #[test]
    fn bound_estimate_is_a_high_percentile() {
        let ds = toy(5, 10);
        let kind = Dissimilarity::Wasserstein(SinkhornConfig::with_reg(0.05));
        let m = estimate_bound_m(&ds, &kind, false, 200, 1).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let full = pairwise_matrix(&ds, &all, &DissimilaritySpec::new(kind, 1e9).unwrap()).unwrap();
        let max = full.values.iter().cloned().fold(0.0, f64::max);
        assert!(m > 0.0 && m <= max);
        assert_eq!(m, estimate_bound_m(&ds, &kind, false, 200, 1).unwrap());
    }

    #[test]
    fn spec_round_trips_through_toml_like_serde() {
        let spec = DissimilaritySpec::new(Dissimilarity::Mmd(MmdConfig::default()), 3.0).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: DissimilaritySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let wd: DissimilaritySpec =
            serde_json::from_str(r#"{"kind":"wasserstein","reg":0.1,"bound_m":5}"#).unwrap();
        assert_eq!(
            wd.kind,
            Dissimilarity::Wasserstein(SinkhornConfig::with_reg(0.1))
        );
        assert!(DissimilaritySpec::new(Dissimilarity::Bures, 0.0).is_err());
    }

    #[test]
    fn csv_exports() {
        let ds = toy(1, 11);
        let e = embed(&ds, &[0, 1], &wd_spec(100.0)).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t0,t1,label\n"));
        let m = pairwise_matrix(&ds, &[1], &wd_spec(100.0)).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("item,1\n0,"));
    }
}
