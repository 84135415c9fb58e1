//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails. `ACCEPTANCE_ONLY=1,4` runs a subset.

use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use distemb::classify::{
    accuracy, cross_validate_matrix, predict, train_grbf, train_kernel_with, train_linear_with,
    CvGrid, KernelSvmConfig, LinearSvmConfig, ModelKind,
};
use distemb::embed::{
    estimate_bound_m, goodness_estimate, margin_theory, pairwise_matrix,
    sample_complexity_empirical, sample_complexity_population, Dissimilarity, DissimilaritySpec,
    TemplateStrategy,
};
use distemb::gaussian::{bures_deviation_bound, bures_wasserstein};
use distemb::mmd::mmd_deviation_bound;
use distemb::ot::{
    cost_matrix, exact_1d, exact_assignment, sinkhorn, wasserstein, CostNormalization,
    SinkhornConfig,
};
use distemb::toygen::{
    gen_mean_separated, load_point_cloud_dir, write_shape_corpus, CloudLoadOptions, MeanSepSpec,
    ToySpec3Class,
};
use distemb::{GaussianParams, PointSet};

use distemb_cli::bench::run_bench;
use distemb_cli::concentration::run_concentration;
use distemb_cli::config::{
    ConcentrationConfig, ConcentrationSource, DatasetSource, ExperimentConfig, Method,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize, mean_scale: f64) -> GaussianParams {
    let a = normal_matrix(rng, d, d);
    let cov = a.dot(&a.t()) / d as f64 + Array2::<f64>::eye(d) * 0.1;
    let mean = Array1::from_shape_fn(d, |_| {
        mean_scale * <StandardNormal as rand_distr::Distribution<f64>>::sample(&StandardNormal, rng)
    });
    GaussianParams::new(mean, cov).unwrap()
}

fn sample_gaussian(rng: &mut ChaCha8Rng, g: &GaussianParams, n: usize) -> PointSet {
    let chol = distemb::toygen::cholesky(g.covariance().view()).unwrap();
    let z = normal_matrix(rng, n, g.dim());
    PointSet::uniform(&z.dot(&chol.t()) + g.mean()).unwrap()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Exact OT oracles agree with each other and with Sinkhorn at small reg.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut one_d, mut worst_1d, mut worst_rel) = (0, 0.0f64, 0.0f64);
    for i in 0..200 {
        let n = rng.random_range(2..=20);
        let d = rng.random_range(1..=5);
        let p = if i % 2 == 0 { 1.0 } else { 2.0 };
        let a = PointSet::uniform(normal_matrix(&mut rng, n, d)).unwrap();
        let b = PointSet::uniform(normal_matrix(&mut rng, n, d)).unwrap();
        let exact = exact_assignment(&a, &b, p).unwrap();
        if d == 1 {
            one_d += 1;
            worst_1d = worst_1d.max((exact - exact_1d(&a, &b, p).unwrap()).abs());
        }
        let cost = cost_matrix(&a, &b, p).unwrap();
        let cfg = SinkhornConfig {
            reg: 1e-3 * median(cost.as_slice().unwrap()),
            p,
            ..SinkhornConfig::default()
        };
        let (_, v) = sinkhorn(cost.view(), a.weights().view(), b.weights().view(), &cfg).unwrap();
        let target = exact.powf(p);
        worst_rel = worst_rel.max((v - target).abs() / target);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_1d <= 1e-10 && worst_rel <= 0.02 && secs < 30.0,
        format!("{one_d} 1-D cases, max |hungarian - sorted| = {worst_1d:.1e}; max sinkhorn rel. error = {worst_rel:.2e}; {secs:.1}s"),
    )
}

/// Bures-Wasserstein metric axioms, diagonal formula, and agreement of
/// Sinkhorn on large samples with the closed form.
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut sym, mut tri, mut ident) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=10);
        let g: Vec<GaussianParams> = (0..3).map(|_| random_gaussian(&mut rng, d, 1.0)).collect();
        let w = |i: usize, j: usize| bures_wasserstein(&g[i], &g[j]).unwrap();
        sym = sym.max((w(0, 1) - w(1, 0)).abs());
        tri = tri.max(w(0, 2) - w(0, 1) - w(1, 2));
        ident = ident.max(w(0, 0));
    }
    let mut diag = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=10);
        let m1: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m2: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s1: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..4.0)).collect();
        let s2: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..4.0)).collect();
        let mut hand = 0.0;
        for k in 0..d {
            hand += (m1[k] - m2[k]).powi(2) + (s1[k].sqrt() - s2[k].sqrt()).powi(2);
        }
        let g1 =
            GaussianParams::new(Array1::from(m1), Array2::from_diag(&Array1::from(s1))).unwrap();
        let g2 =
            GaussianParams::new(Array1::from(m2), Array2::from_diag(&Array1::from(s2))).unwrap();
        diag = diag.max((bures_wasserstein(&g1, &g2).unwrap() - hand.sqrt()).abs());
    }
    let cfg = SinkhornConfig {
        reg: 1e-2,
        tol: 1e-7,
        normalize_cost: CostNormalization::Median,
        ..SinkhornConfig::default()
    };
    let mut close = 0;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let g1 = random_gaussian(&mut rng, 2, 2.0);
        let g2 = random_gaussian(&mut rng, 2, 2.0);
        let truth = bures_wasserstein(&g1, &g2).unwrap();
        let a = sample_gaussian(&mut rng, &g1, 2000);
        let b = sample_gaussian(&mut rng, &g2, 2000);
        let rel = (wasserstein(&a, &b, &cfg).unwrap() - truth).abs() / truth;
        worst = worst.max(rel);
        if rel <= 0.10 {
            close += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass =
        sym <= 1e-8 && tri <= 1e-7 && ident <= 1e-7 && diag <= 1e-10 && close >= 18 && secs < 120.0;
    outcome(
        pass,
        format!(
            "symmetry {sym:.1e}, triangle excess {tri:.1e}, W(a,a) {ident:.1e}, diagonal formula {diag:.1e}; \
             sinkhorn within 10% on {close}/20 (worst {worst:.3}); {secs:.1}s"
        ),
    )
}

fn bures_transcribed(n: f64, d: f64, eps: f64, cv: f64, cs: f64) -> f64 {
    let t1 = 2.0
        * d
        * f64::exp(
            -(n * eps.powi(2) / (8.0 * d.powi(4))) / (cv * cs + 2.0 * cv * eps / (3.0 * d.powi(2))),
        );
    let q = n.sqrt() * eps.powi(2) / (24.0 * cv.sqrt()) - 1.0;
    let t2 = if q >= 0.0 { f64::exp(-q.sqrt()) } else { 1.0 };
    (t1 + t2).min(1.0)
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

/// Bound functions against direct transcriptions, frozen values, and
/// monotonicity.
fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let bures_cases = [
        (1e6, 2.0, 1.0, 4.0, 1.0),
        (5e4, 1.0, 0.5, 2.0, 0.5),
        (1e8, 3.0, 2.0, 9.0, 2.0),
        (100.0, 2.0, 1.0, 4.0, 1.0),
    ];
    // Frozen at first computation.
    let bures_frozen = [
        0.011638193201541766,
        0.44736731202899505,
        5.926493610191416e-11,
        1.0,
    ];
    for (c, frozen) in bures_cases.iter().zip(bures_frozen) {
        let v = bures_deviation_bound(c.0, c.1, c.2, c.3, c.4).unwrap();
        worst = worst
            .max((v - bures_transcribed(c.0, c.1, c.2, c.3, c.4)).abs())
            .max((v - frozen).abs());
    }
    let mmd_cases = [(10usize, 1.0, 0.5), (101, 1.0, 0.3), (1000, 2.0, 1.0)];
    let mmd_frozen = [0.8553453273074225, 0.569782824730923, 1.6373771305908126e-7];
    for (c, frozen) in mmd_cases.iter().zip(mmd_frozen) {
        let v = mmd_deviation_bound(c.0, c.1, c.2).unwrap();
        let direct = f64::exp(-c.2 * c.2 * (c.0 / 2) as f64 / (8.0 * c.1 * c.1));
        worst = worst.max((v - direct).abs()).max((v - frozen).abs());
    }
    let pop_cases = [
        (1.0, 0.5, 0.05, 237u64),
        (2.0, 1.0, 0.01, 340),
        (0.7, 0.1, 0.2, 1806),
    ];
    for (m, g, delta, frozen) in pop_cases {
        let v = sample_complexity_population(m, g, delta).unwrap();
        let direct = ((4.0 * m / g).powi(2) * (2.0 / delta).ln()).ceil() as u64;
        if v != direct || v != frozen {
            failures.push(format!(
                "population({m},{g},{delta}) = {v}, direct {direct}, frozen {frozen}"
            ));
        }
    }
    let emp_cases = [(1.0, 0.5, 0.05, 0.5, 945u64), (2.0, 1.0, 0.1, 0.9, 973)];
    for (m, g, delta, lam, frozen) in emp_cases {
        let v = sample_complexity_empirical(m, g, delta, lam).unwrap();
        let direct =
            (32.0 * m * m / (g * g) * (2.0 / (delta * delta * (1.0 - lam))).ln()).ceil() as u64;
        if v != direct || v != frozen {
            failures.push(format!(
                "empirical({m},{g},{delta},{lam}) = {v}, direct {direct}, frozen {frozen}"
            ));
        }
    }
    let ns = [10.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7];
    let eps = [0.05, 0.1, 0.3, 1.0, 3.0, 10.0];
    let gammas = [0.05, 0.1, 0.5, 1.0, 2.0, 4.0];
    let mut monotone = true;
    for &e in &eps {
        let v: Vec<f64> = ns
            .iter()
            .map(|&n| bures_deviation_bound(n, 2.0, e, 4.0, 1.0).unwrap())
            .collect();
        monotone &= nonincreasing(&v);
        let v: Vec<f64> = ns
            .iter()
            .map(|&n| mmd_deviation_bound(n as usize, 1.0, e).unwrap())
            .collect();
        monotone &= nonincreasing(&v);
    }
    for &n in &ns {
        let v: Vec<f64> = eps
            .iter()
            .map(|&e| bures_deviation_bound(n, 2.0, e, 4.0, 1.0).unwrap())
            .collect();
        monotone &= nonincreasing(&v);
        let v: Vec<f64> = eps
            .iter()
            .map(|&e| mmd_deviation_bound(n as usize, 1.0, e).unwrap())
            .collect();
        monotone &= nonincreasing(&v);
    }
    let pop: Vec<f64> = gammas
        .iter()
        .map(|&g| sample_complexity_population(1.0, g, 0.05).unwrap() as f64)
        .collect();
    let emp: Vec<f64> = gammas
        .iter()
        .map(|&g| sample_complexity_empirical(1.0, g, 0.05, 0.5).unwrap() as f64)
        .collect();
    monotone &= nonincreasing(&pop) && nonincreasing(&emp);
    if !monotone {
        failures.push("a bound is not monotone on its grid".into());
    }
    let pass = worst <= 1e-12 && failures.is_empty();
    let mut detail =
        format!("max deviation from transcription/frozen values {worst:.1e}; monotone {monotone}");
    for f in failures {
        detail.push_str("; ");
        detail.push_str(&f);
    }
    outcome(pass, detail)
}

/// Concentration harness on a 2-D Gaussian.
fn criterion_4() -> Outcome {
    let cfg = ConcentrationConfig {
        target: ConcentrationSource::Gaussian {
            mean: vec![1.0, -1.0],
            cov: vec![vec![1.0, 0.3], vec![0.3, 0.5]],
        },
        n_grid: vec![10, 30, 100, 300, 1000],
        eps_grid: vec![0.1, 0.3, 1.0, 3.0, 5.0, 10.0],
        trials: 500,
        seed: 4,
        c_v: None,
        c_sigma: None,
        mmd_bandwidth: 1.0,
        out: None,
    };
    let out = run_concentration(&cfg).unwrap();
    let slack = 2.0 / (cfg.trials as f64).sqrt();
    let bures: Vec<_> = out.rows.iter().filter(|r| r.distance == "bures").collect();
    let mut monotone = true;
    for &e in &cfg.eps_grid {
        let f: Vec<f64> = bures
            .iter()
            .filter(|r| r.eps == e)
            .map(|r| r.frequency)
            .collect();
        monotone &= f.windows(2).all(|w| w[1] <= w[0] + slack);
    }
    let informative: Vec<_> = bures.iter().filter(|r| r.bound < 1.0).collect();
    let violations = informative.iter().filter(|r| r.frequency > r.bound).count();
    outcome(
        monotone && violations == 0,
        format!(
            "monotone in N: {monotone}; {} cells with bound < 1, {violations} exceeded (C_v = {:.2}, C_sigma = {:.3})",
            informative.len(),
            out.c_v,
            out.c_sigma
        ),
    )
}

/// Trend of the toy experiment at d = 50.
fn criterion_5() -> Outcome {
    let start = Instant::now();
    let methods: Vec<Method> = ["wd+kernel", "mmd+kernel", "bures+linear", "bures+kernel"]
        .iter()
        .map(|m| m.parse().unwrap())
        .collect();
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Toy(ToySpec3Class {
            d: 50,
            n_dists: 250,
            n_samples: 30,
            ..ToySpec3Class::default()
        }),
        methods: methods.clone(),
        templates: TemplateStrategy::All,
        grid: CvGrid::default(),
        trials: 5,
        seed: 5,
        n_test: 2000,
        n_train: None,
        sweep: None,
        wasserstein: SinkhornConfig::default(),
        mmd: Default::default(),
        bound_m: Default::default(),
        bound_pairs: 1000,
        out: None,
    };
    let res = run_bench(&cfg).unwrap();
    let mean_of = |m: Method| {
        res.rows
            .iter()
            .find(|r| r.trial.is_none() && r.method == m)
            .and_then(|r| r.accuracy)
            .unwrap_or(f64::NAN)
    };
    let acc: Vec<f64> = methods.iter().map(|&m| mean_of(m)).collect();
    let failed = res
        .rows
        .iter()
        .filter(|r| r.trial.is_some() && r.error.is_some())
        .count();
    let gap = acc[0] - acc[1];
    let bures = acc[2].max(acc[3]);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        gap >= 0.10 && bures >= 0.95 && failed == 0,
        format!(
            "mean accuracy wd+kernel {:.3}, mmd+kernel {:.3} (gap {:+.3}), bures+linear {:.3}, bures+kernel {:.3}; \
             {failed} failed trials; {secs:.0}s on {} worker(s)",
            acc[0],
            acc[1],
            gap,
            acc[2],
            acc[3],
            rayon::current_num_threads()
        ),
    )
}

/// Goodness of WD on well-separated means, and the MMD/WD margin ratio.
fn criterion_6() -> Outcome {
    let d = 5;
    let mut m_pos = vec![0.0; d];
    m_pos[0] = 3.0;
    let mut spec = MeanSepSpec::isotropic(vec![0.0; d], m_pos, 0.01, 1.0, 100, 50);
    spec.seed = 6;
    let d_star = spec.d_star();
    let ds = gen_mean_separated(&spec).unwrap();
    let wd = DissimilaritySpec {
        kind: Dissimilarity::Wasserstein(SinkhornConfig::default()),
        bound_m: 100.0 * d_star,
        squared: true,
    };
    let report = goodness_estimate(&ds, &wd, 0.5 * d_star).unwrap();
    let ratios: Vec<f64> = [2usize, 10, 25, 50]
        .iter()
        .map(|&d| {
            let neg = Array1::<f64>::zeros(d);
            let mut pos = Array1::<f64>::zeros(d);
            pos[0] = 3.0;
            let (g_wd, g_mmd) = margin_theory(neg.view(), pos.view(), 0.5, 1.0, 1.0, d).unwrap();
            g_mmd / g_wd
        })
        .collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    outcome(
        report.epsilon_hat < 0.05 && decreasing,
        format!(
            "epsilon_hat = {:.3} at gamma = {:.2} (Tr Sigma0 = {:.2}); gamma_mmd/gamma_wd over d = 2,10,25,50: {:?}",
            report.epsilon_hat,
            0.5 * d_star,
            0.01 * d as f64,
            ratios.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>()
        ),
    )
}

/// Synthetic shape corpus: WD + linear against Bures + linear.
fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    write_shape_corpus(dir.path(), 60, 200, 7).unwrap();
    let opts = CloudLoadOptions {
        subsample: 100,
        seed: 7,
        center: true,
    };
    let ds = load_point_cloud_dir(dir.path(), &opts).unwrap();
    let grid = CvGrid {
        folds: 5,
        seed: 7,
        ..CvGrid::default()
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    let cv_accuracy = |kind: Dissimilarity| {
        let m = estimate_bound_m(&ds, &kind, false, 1000, 7).unwrap();
        let spec = DissimilaritySpec::new(kind, m).unwrap();
        let d = pairwise_matrix(&ds, &all, &spec).unwrap();
        let cv = cross_validate_matrix(&ds, &d, TemplateStrategy::All, &grid, ModelKind::Linear)
            .unwrap();
        cv.table
            .iter()
            .map(|r| r.mean_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let wd = cv_accuracy(Dissimilarity::Wasserstein(SinkhornConfig::default()));
    let bures = cv_accuracy(Dissimilarity::Bures);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        wd >= 0.9 && wd > bures,
        format!(
            "5-fold CV accuracy wd+linear {wd:.3}, bures+linear {bures:.3} ({} clouds); {secs:.0}s",
            ds.len()
        ),
    )
}

fn blobs(
    rng: &mut ChaCha8Rng,
    centres: &[[f64; 2]],
    per_class: usize,
    spread: f64,
) -> (Array2<f64>, Vec<usize>) {
    let mut x = Array2::zeros((centres.len() * per_class, 2));
    let mut y = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for i in 0..per_class {
            let r = c * per_class + i;
            for j in 0..2 {
                x[[r, j]] = centre[j]
                    + spread
                        * <StandardNormal as rand_distr::Distribution<f64>>::sample(
                            &StandardNormal,
                            rng,
                        );
            }
            y.push(c);
        }
    }
    (x, y)
}

/// Solver behaviour on fixed fixtures.
fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let codebook = |k: usize| (0..k).map(|c| c.to_string()).collect::<Vec<_>>();
    let separable = [
        blobs(&mut rng, &[[0.0, 0.0], [4.0, 4.0]], 30, 0.5),
        blobs(&mut rng, &[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]], 25, 0.4),
    ];
    let overlapping = [
        blobs(&mut rng, &[[0.0, 0.0], [1.0, 0.5]], 40, 1.0),
        blobs(&mut rng, &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 30, 1.0),
    ];
    let mut dual_monotone = true;
    let mut max_kkt = 0.0f64;
    let mut kernel_converged = true;
    let mut separable_acc = 1.0f64;
    for (i, (x, y)) in separable.iter().chain(&overlapping).enumerate() {
        let k = y.iter().max().unwrap() + 1;
        let is_separable = i < separable.len();
        for c in [0.1, 1.0, 1e4] {
            let cfg = LinearSvmConfig {
                c,
                ..LinearSvmConfig::default()
            };
            let (model, report) = train_linear_with(x.view(), y, &codebook(k), &cfg).unwrap();
            for m in &report.machines {
                dual_monotone &= m
                    .dual_history
                    .windows(2)
                    .all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
            }
            if is_separable && c == 1e4 {
                separable_acc =
                    separable_acc.min(accuracy(&predict(&model, x.view()).unwrap(), y).unwrap());
            }
            let kcfg = KernelSvmConfig {
                c,
                ..KernelSvmConfig::default()
            };
            let (model, report) = train_kernel_with(x.view(), y, &codebook(k), 1.0, &kcfg).unwrap();
            for m in &report.machines {
                max_kkt = max_kkt.max(m.kkt_violation);
                kernel_converged &= m.converged;
            }
            if is_separable && c == 1e4 {
                separable_acc =
                    separable_acc.min(accuracy(&predict(&model, x.view()).unwrap(), y).unwrap());
            }
            let n = x.nrows();
            let dist = Array2::from_shape_fn((n, n), |(a, b)| {
                ((x[[a, 0]] - x[[b, 0]]).powi(2) + (x[[a, 1]] - x[[b, 1]]).powi(2)).sqrt()
            });
            let (_, report) = train_grbf(dist.view(), y, &codebook(k), 0.5, &kcfg).unwrap();
            for m in &report.machines {
                max_kkt = max_kkt.max(m.kkt_violation);
                kernel_converged &= m.converged;
            }
        }
    }
    outcome(
        dual_monotone && max_kkt <= 1e-3 && kernel_converged && separable_acc == 1.0,
        format!(
            "linear dual monotone: {dual_monotone}; max kernel KKT violation {max_kkt:.1e} (all converged: {kernel_converged}); \
             min training accuracy on separable fixtures {separable_acc:.3}"
        ),
    )
}

/// Byte-identical bench output across worker counts.
fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        r#"
methods = ["wd+linear", "wd+kernel", "mmd+kernel", "bures+linear", "bures+grbf"]
trials = 3
seed = 99
n_test = 60
templates = "per-class:4"
[dataset]
source = "toy"
d = 3
n_dists = 45
n_samples = 20
[grid]
folds = 3
"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "2", "4"] {
        let out = dir.path().join(format!("w{workers}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_distemb"))
            .args(["--workers", workers, "bench", "--spec"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(
                false,
                format!("bench with --workers {workers} exited with {status}"),
            );
        }
        outputs.push(std::fs::read(&out).unwrap());
    }
    let rerun = dir.path().join("rerun.csv");
    Command::new(env!("CARGO_BIN_EXE_distemb"))
        .args(["--workers", "2", "bench", "--spec"])
        .arg(&cfg)
        .arg("--out")
        .arg(&rerun)
        .status()
        .unwrap();
    outputs.push(std::fs::read(&rerun).unwrap());
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        identical,
        format!(
            "{} runs with --workers 1, 2, 4, 2: byte-identical = {identical} ({} bytes)",
            outputs.len(),
            outputs[0].len()
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = run();
        println!(
            "criterion {id}: {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
