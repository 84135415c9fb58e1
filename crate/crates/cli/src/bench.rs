//! Repeated train/test experiments over a sweep of training-set sizes or
//! dimensions.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use distemb::classify::{accuracy, cross_validate_matrix, fit_pipeline_with_matrix};
use distemb::dataset::DistributionDataset;
use distemb::embed::{
    cross_matrix, estimate_bound_m, pairwise_matrix, DissimilaritySpec, DistanceMatrix,
};
use distemb::toygen::{gen_three_class, CloudLoadOptions, ToySpec3Class};

use crate::config::{dissimilarity, DatasetSource, DissKind, ExperimentConfig, Method, SweepParam};
use crate::data::load_any;

/// One line of the results CSV: a single trial, or the aggregate over the
/// trials of a sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// `None` for aggregate rows.
    pub trial: Option<usize>,
    pub method: Method,
    pub n: usize,
    pub d: usize,
    /// Test accuracy, or the mean over successful trials.
    pub accuracy: Option<f64>,
    /// Sample standard deviation over trials; aggregate rows only.
    pub std: Option<f64>,
    pub c: Option<f64>,
    pub scale: Option<f64>,
    pub cv_accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Wall-clock measurements, kept apart from the deterministic results.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub trial: usize,
    pub method: Method,
    pub n: usize,
    pub d: usize,
    /// Time spent on this method's dissimilarity matrices, shared with the
    /// other methods using the same dissimilarity.
    pub matrix_seconds: f64,
    pub fit_seconds: f64,
    pub evaluations: usize,
    pub seconds_per_evaluation: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    pub timings: Vec<TimingRow>,
}

pub const RESULTS_HEADER: [&str; 10] = [
    "row",
    "method",
    "n",
    "d",
    "accuracy",
    "std",
    "c",
    "scale",
    "cv_accuracy",
    "error",
];
pub const TIMING_HEADER: [&str; 8] = [
    "trial",
    "method",
    "n",
    "d",
    "matrix_seconds",
    "fit_seconds",
    "evaluations",
    "seconds_per_evaluation",
];

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one role of one trial at one sweep point.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Stratified split: per-class shuffles, class shares of the training set
/// by largest remainder, and the leftovers (capped at `n_test`) for testing.
pub fn stratified_split(
    ds: &DistributionDataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train >= ds.len() {
        bail!(
            "cannot train on {n_train} of {} items and keep a test set",
            ds.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ds.labels();
    let counts = ds.class_counts();
    let total = ds.len() as f64;
    let mut take: Vec<usize> = counts
        .iter()
        .map(|&c| (n_train as f64 * c as f64 / total).floor() as usize)
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let frac = |c: usize| n_train as f64 * counts[c] as f64 / total - take[c] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut missing = n_train - take.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if take[c] < counts[c] {
            take[c] += 1;
            missing -= 1;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, &k) in take.iter().enumerate() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.shuffle(&mut rng);
    test.truncate(n_test);
    test.sort_unstable();
    Ok((train, test))
}

enum Source {
    Toy(ToySpec3Class),
    Fixed(DistributionDataset),
}

impl Source {
    fn trial_data(
        &self,
        cfg: &ExperimentConfig,
        n: usize,
        d: usize,
        trial: usize,
    ) -> Result<(DistributionDataset, DistributionDataset)> {
        let key = [n as u64, d as u64, trial as u64];
        match self {
            Source::Toy(base) => {
                let train = gen_three_class(&ToySpec3Class {
                    d,
                    n_dists: n,
                    seed: derive_seed(cfg.seed, &[key[0], key[1], key[2], 0]),
                    ..base.clone()
                })?;
                let test = gen_three_class(&ToySpec3Class {
                    d,
                    n_dists: cfg.n_test,
                    seed: derive_seed(cfg.seed, &[key[0], key[1], key[2], 1]),
                    ..base.clone()
                })?;
                Ok((train, test))
            }
            Source::Fixed(ds) => {
                let (tr, te) = stratified_split(
                    ds,
                    n,
                    cfg.n_test,
                    derive_seed(cfg.seed, &[key[0], key[1], key[2], 2]),
                )?;
                Ok((ds.subset(&tr)?, ds.subset(&te)?))
            }
        }
    }
}

struct MethodOutcome {
    row: BenchRow,
    timing: Option<TimingRow>,
}

fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    train: &DistributionDataset,
    test: &DistributionDataset,
    matrices: &(DistanceMatrix, DistanceMatrix),
) -> Result<(f64, f64, distemb::classify::CvParams)> {
    let (dtr, dte) = matrices;
    let cv = cross_validate_matrix(train, dtr, cfg.templates, &cfg.grid, method.model)?;
    let cv_acc = cv
        .table
        .iter()
        .find(|r| r.params == cv.best)
        .map_or(f64::NAN, |r| r.mean_accuracy);
    let fitted = fit_pipeline_with_matrix(
        train,
        dtr,
        cfg.templates,
        method.model,
        cv.best,
        cfg.grid.seed,
    )?;
    let rows: Vec<usize> = (0..test.len()).collect();
    let sub = dte.select(&rows, &fitted.template_ids);
    let pred = fitted.predict_matrix(&sub)?;
    Ok((accuracy(&pred, &test.labels())?, cv_acc, cv.best))
}

fn matrices(
    cfg: &ExperimentConfig,
    diss: DissKind,
    train: &DistributionDataset,
    test: &DistributionDataset,
    seed: u64,
) -> Result<(DistanceMatrix, DistanceMatrix)> {
    let kind = dissimilarity(diss, &cfg.wasserstein, &cfg.mmd);
    let m = match cfg.bound_m.get(diss) {
        Some(m) => m,
        None => estimate_bound_m(train, &kind, false, cfg.bound_pairs, seed)?,
    };
    let spec = DissimilaritySpec::new(kind, m)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let dtr = pairwise_matrix(train, &all, &spec)?;
    let dte = cross_matrix(test, train, &all, &dtr.spec)?;
    Ok((dtr, dte))
}

fn trial_outcomes(
    cfg: &ExperimentConfig,
    source: &Source,
    n: usize,
    d: usize,
    trial: usize,
) -> Vec<MethodOutcome> {
    let blank = |method: Method, error: String| MethodOutcome {
        row: BenchRow {
            trial: Some(trial),
            method,
            n,
            d,
            accuracy: None,
            std: None,
            c: None,
            scale: None,
            cv_accuracy: None,
            error: Some(error),
        },
        timing: None,
    };
    let (train, test) = match source.trial_data(cfg, n, d, trial) {
        Ok(pair) => pair,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| blank(m, format!("{e:#}")))
                .collect()
        }
    };
    let mut by_diss: BTreeMap<DissKind, (Result<(DistanceMatrix, DistanceMatrix)>, f64)> =
        BTreeMap::new();
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let (mats, matrix_seconds) = by_diss.entry(method.diss).or_insert_with(|| {
            let t = Instant::now();
            let seed = derive_seed(cfg.seed, &[n as u64, d as u64, trial as u64, 3]);
            let r = matrices(cfg, method.diss, &train, &test, seed);
            (r, t.elapsed().as_secs_f64())
        });
        let mats = match mats {
            Ok(m) => m,
            Err(e) => {
                out.push(blank(method, format!("{e:#}")));
                continue;
            }
        };
        let t = Instant::now();
        let result = run_method(cfg, method, &train, &test, mats);
        let fit_seconds = t.elapsed().as_secs_f64();
        let evaluations = mats.0.stats.evaluations + mats.1.stats.evaluations;
        let eval_seconds = mats.0.stats.eval_seconds + mats.1.stats.eval_seconds;
        let timing = TimingRow {
            trial,
            method,
            n,
            d,
            matrix_seconds: *matrix_seconds,
            fit_seconds,
            evaluations,
            seconds_per_evaluation: if evaluations > 0 {
                eval_seconds / evaluations as f64
            } else {
                0.0
            },
        };
        match result {
            Ok((acc, cv_acc, params)) => {
                log::info!("trial {trial} {method} n={n} d={d}: accuracy {acc:.4}");
                out.push(MethodOutcome {
                    row: BenchRow {
                        trial: Some(trial),
                        method,
                        n,
                        d,
                        accuracy: Some(acc),
                        std: None,
                        c: Some(params.c),
                        scale: params.scale,
                        cv_accuracy: Some(cv_acc),
                        error: None,
                    },
                    timing: Some(timing),
                });
            }
            Err(e) => {
                let mut o = blank(method, format!("{e:#}"));
                o.timing = Some(timing);
                out.push(o);
            }
        }
    }
    out
}

fn aggregate(method: Method, n: usize, d: usize, rows: &[&BenchRow]) -> BenchRow {
    let accs: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    let cvs: Vec<f64> = rows.iter().filter_map(|r| r.cv_accuracy).collect();
    let failed = rows.len() - accs.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (accuracy, std) = if accs.is_empty() {
        (None, None)
    } else {
        let m = mean(&accs);
        let var = if accs.len() > 1 {
            accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (accs.len() - 1) as f64
        } else {
            0.0
        };
        (Some(m), Some(var.sqrt()))
    };
    BenchRow {
        trial: None,
        method,
        n,
        d,
        accuracy,
        std,
        c: None,
        scale: None,
        cv_accuracy: (!cvs.is_empty()).then(|| mean(&cvs)),
        error: (failed > 0).then(|| format!("{failed} of {} trials failed", rows.len())),
    }
}

/// Runs every trial at every sweep point. Failures are recorded in the rows
/// and do not stop the run; only an unusable configuration is an error.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    let (source, n0, d0) = match &cfg.dataset {
        DatasetSource::Toy(spec) => {
            spec.validate()?;
            (
                Source::Toy(spec.clone()),
                cfg.n_train.unwrap_or(spec.n_dists),
                spec.d,
            )
        }
        DatasetSource::Directory {
            path,
            subsample,
            center,
        } => {
            let opts = CloudLoadOptions {
                subsample: *subsample,
                seed: cfg.seed,
                center: *center,
            };
            let ds = load_any(path, &opts)?;
            let n = cfg.n_train.unwrap_or(ds.len() / 2);
            let d = ds.dimension();
            (Source::Fixed(ds), n, d)
        }
    };
    let points: Vec<(usize, usize)> = match &cfg.sweep {
        None => vec![(n0, d0)],
        Some(s) => match s.param {
            SweepParam::N => s.values.iter().map(|&n| (n, d0)).collect(),
            SweepParam::D => s.values.iter().map(|&d| (n0, d)).collect(),
        },
    };
    let mut output = BenchOutput::default();
    for &(n, d) in &points {
        let mut per_trial = Vec::new();
        for trial in 0..cfg.trials {
            for o in trial_outcomes(cfg, &source, n, d, trial) {
                per_trial.push(o.row);
                output.timings.extend(o.timing);
            }
        }
        let aggregates: Vec<BenchRow> = cfg
            .methods
            .iter()
            .map(|&method| {
                let rows: Vec<&BenchRow> =
                    per_trial.iter().filter(|r| r.method == method).collect();
                aggregate(method, n, d, &rows)
            })
            .collect();
        output.rows.extend(per_trial);
        output.rows.extend(aggregates);
    }
    Ok(output)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results<W: Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for r in rows {
        out.write_record([
            r.trial
                .map_or_else(|| "mean".to_string(), |t| t.to_string()),
            r.method.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            opt(r.accuracy),
            opt(r.std),
            opt(r.c),
            opt(r.scale),
            opt(r.cv_accuracy),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_timings<W: Write>(rows: &[TimingRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TIMING_HEADER)?;
    for r in rows {
        out.write_record([
            r.trial.to_string(),
            r.method.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.matrix_seconds.to_string(),
            r.fit_seconds.to_string(),
            r.evaluations.to_string(),
            r.seconds_per_evaluation.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
