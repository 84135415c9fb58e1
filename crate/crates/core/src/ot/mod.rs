//! Wasserstein distances between point sets.

mod cost;
mod exact;
mod sinkhorn;

use std::cmp::Ordering;

pub use cost::cost_matrix;
pub use exact::{
    exact_1d, exact_assignment, exact_assignment_capped, min_cost_assignment, DEFAULT_ORACLE_CAP,
};
pub use sinkhorn::{sinkhorn, CostNormalization, SinkhornConfig, SinkhornValue, TransportPlan};

pub(crate) use sinkhorn::lower_median;

use crate::distribution::PointSet;
use crate::error::{Error, Result};

/// Total order on point sets used to pick a canonical orientation, so the
/// solver sees the same problem for `(a, b)` and `(b, a)`.
fn canonical_order(a: &PointSet, b: &PointSet) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| {
            a.points()
                .iter()
                .zip(b.points().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| {
            a.weights()
                .iter()
                .zip(b.weights().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Entropic `W_p` with convergence information; `value` is already raised
/// to `1/p`.
pub fn wasserstein_detailed(
    a: &PointSet,
    b: &PointSet,
    cfg: &SinkhornConfig,
) -> Result<SinkhornValue> {
    cfg.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let (rows, cols) = if canonical_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let all_positive = rows
        .weights()
        .iter()
        .chain(cols.weights().iter())
        .all(|&w| w > 0.0);
    let raw = if all_positive {
        let cost = cost::cost_dense(rows.points().view(), cols.points().view(), cfg.p);
        let wa = rows.weights().as_slice().expect("contiguous weights");
        let wb = cols.weights().as_slice().expect("contiguous weights");
        sinkhorn::sinkhorn_value_dense(&cost, wa, wb, cfg)?
    } else {
        let cost = cost_matrix(rows, cols, cfg.p)?;
        let (plan, value) = sinkhorn(
            cost.view(),
            rows.weights().view(),
            cols.weights().view(),
            cfg,
        )?;
        SinkhornValue {
            value,
            converged: plan.converged,
            iterations: plan.iterations,
        }
    };
    Ok(SinkhornValue {
        value: raw.value.max(0.0).powf(1.0 / cfg.p),
        ..raw
    })
}

/// Entropic approximation of `W_p(a, b)`.
pub fn wasserstein(a: &PointSet, b: &PointSet, cfg: &SinkhornConfig) -> Result<f64> {
    let out = wasserstein_detailed(a, b, cfg)?;
    if !out.converged {
        log::warn!(
            "sinkhorn stopped after {} iterations without reaching tol {:e}",
            out.iterations,
            cfg.tol
        );
    }
    Ok(out.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointSet {
        PointSet::uniform(Array2::from_shape_fn((n, d), |_| {
            rng.random::<f64>() * 4.0 - 2.0
        }))
        .unwrap()
    }

    #[test]
    fn diracs_give_their_distance() {
        let a = PointSet::uniform(array![[0.0, 0.0]]).unwrap();
        let b = PointSet::uniform(array![[3.0, 4.0]]).unwrap();
        let cfg = SinkhornConfig {
            p: 1.0,
            ..SinkhornConfig::default()
        };
        assert_eq!(wasserstein(&a, &b, &cfg).unwrap(), 5.0);
        let c = PointSet::uniform(array![[2.0, 0.0]]).unwrap();
        let cost = cost_matrix(&a, &c, 2.0).unwrap();
        let (_, v) = sinkhorn(
            cost.view(),
            a.weights().view(),
            c.weights().view(),
            &SinkhornConfig::default(),
        )
        .unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn self_distance_vanishes_with_reg() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_set(&mut rng, 12, 3);
        let mut prev = f64::INFINITY;
        for reg in [1.0, 0.1, 0.01, 1e-3, 1e-5] {
            let w = wasserstein(&a, &a, &SinkhornConfig::with_reg(reg)).unwrap();
            assert!(w <= prev + 1e-12);
            prev = w;
        }
        assert!(prev < 1e-6, "W(a,a) at tiny reg = {prev}");
    }

    #[test]
    fn close_to_hungarian_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in [1.0, 2.0] {
            for _ in 0..10 {
                let a = random_set(&mut rng, 8, 2);
                let b = random_set(&mut rng, 8, 2);
                let cost = cost_matrix(&a, &b, p).unwrap();
                let med = lower_median(cost.as_slice().unwrap());
                let cfg = SinkhornConfig {
                    reg: 1e-3 * med,
                    p,
                    ..SinkhornConfig::default()
                };
                let (_, v) =
                    sinkhorn(cost.view(), a.weights().view(), b.weights().view(), &cfg).unwrap();
                let exact = exact_assignment(&a, &b, p).unwrap().powf(p);
                assert!((v - exact).abs() <= 0.02 * exact, "{v} vs {exact}");
            }
        }
    }

    #[test]
    fn weighted_inputs_with_zero_mass() {
        let a = PointSet::new(array![[0.0], [5.0]], array![1.0, 0.0]).unwrap();
        let b = PointSet::uniform(array![[1.0]]).unwrap();
        assert!((wasserstein(&a, &b, &SinkhornConfig::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_symmetry_from_canonical_orientation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_set(&mut rng, 7, 2);
        let b = random_set(&mut rng, 9, 2);
        let cfg = SinkhornConfig::default();
        assert_eq!(
            wasserstein(&a, &b, &cfg).unwrap(),
            wasserstein(&b, &a, &cfg).unwrap()
        );
    }

    fn point_set_strategy() -> impl Strategy<Value = PointSet> {
        (1usize..8, 1usize..4).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(-5.0f64..5.0, n * d),
                proptest::collection::vec(0.05f64..1.0, n),
            )
                .prop_map(move |(pts, w)| {
                    let s: f64 = w.iter().sum();
                    let w = ndarray::Array1::from_iter(w.iter().map(|x| x / s));
                    let w = &w / w.sum();
                    PointSet::new(Array2::from_shape_vec((n, d), pts).unwrap(), w).unwrap()
                })
        })
    }

    fn same_dim_pair() -> impl Strategy<Value = (PointSet, PointSet)> {
        (1usize..8, 1usize..8, 1usize..4).prop_flat_map(|(n, m, d)| {
            (
                proptest::collection::vec(-5.0f64..5.0, n * d),
                proptest::collection::vec(-5.0f64..5.0, m * d),
            )
                .prop_map(move |(x, y)| {
                    (
                        PointSet::uniform(Array2::from_shape_vec((n, d), x).unwrap()).unwrap(),
                        PointSet::uniform(Array2::from_shape_vec((m, d), y).unwrap()).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn wasserstein_nonnegative_and_symmetric((a, b) in same_dim_pair()) {
            let cfg = SinkhornConfig::with_reg(0.1);
            let ab = wasserstein(&a, &b, &cfg).unwrap();
            let ba = wasserstein(&b, &a, &cfg).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 10.0 * cfg.tol);
        }

        #[test]
        fn converged_plans_meet_marginals(a in point_set_strategy(), reg in 0.01f64..5.0) {
            let b = PointSet::uniform(a.points().mapv(|x| x * 0.5 + 1.0)).unwrap();
            let cost = cost_matrix(&a, &b, 2.0).unwrap();
            let cfg = SinkhornConfig::with_reg(reg);
            let (plan, _) = sinkhorn(cost.view(), a.weights().view(), b.weights().view(), &cfg).unwrap();
            prop_assert!(plan.plan.iter().all(|&p| p >= 0.0));
            if plan.converged {
                prop_assert!(plan.marginal_violation() <= cfg.tol);
            }
        }

        #[test]
        fn transport_cost_grows_with_reg((a, b) in same_dim_pair(), r1 in 0.01f64..1.0, factor in 1.0f64..10.0) {
            let cost = cost_matrix(&a, &b, 2.0).unwrap();
            let lo = SinkhornConfig::with_reg(r1);
            let hi = SinkhornConfig::with_reg(r1 * factor);
            let (_, v1) = sinkhorn(cost.view(), a.weights().view(), b.weights().view(), &lo).unwrap();
            let (_, v2) = sinkhorn(cost.view(), a.weights().view(), b.weights().view(), &hi).unwrap();
            prop_assert!(v1 <= v2 + 1e-8 * (1.0 + v2.abs()), "{} > {}", v1, v2);
        }

        #[test]
        fn exact_assignment_triangle(n in 1usize..7, d in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_set(&mut rng, n, d);
            let y = random_set(&mut rng, n, d);
            let z = random_set(&mut rng, n, d);
            for p in [1.0, 2.0] {
                let xy = exact_assignment(&x, &y, p).unwrap();
                let yz = exact_assignment(&y, &z, p).unwrap();
                let xz = exact_assignment(&x, &z, p).unwrap();
                prop_assert!(xz <= xy + yz + 1e-10);
            }
        }

        #[test]
        fn sinkhorn_tracks_oracle(n in 2usize..=20, d in 1usize..=5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, n, d);
            let b = random_set(&mut rng, n, d);
            let cost = cost_matrix(&a, &b, 2.0).unwrap();
            let med = lower_median(cost.as_slice().unwrap());
            let cfg = SinkhornConfig { reg: 1e-3 * med, ..SinkhornConfig::default() };
            let (_, v) = sinkhorn(cost.view(), a.weights().view(), b.weights().view(), &cfg).unwrap();
            let exact = exact_assignment(&a, &b, 2.0).unwrap().powi(2);
            prop_assert!((v - exact).abs() <= 0.02 * exact + 1e-12, "{} vs {}", v, exact);
        }
    }
}
