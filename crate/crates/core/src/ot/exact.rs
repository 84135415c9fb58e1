//! Exact transport for equal-size uniform point sets, used as test oracles.

use crate::distribution::PointSet;
use crate::error::{Error, Result};

use super::cost::{check_order, cost_dense};

/// Largest instance [`exact_assignment`] accepts.
pub const DEFAULT_ORACLE_CAP: usize = 256;

fn check_oracle_inputs(a: &PointSet, b: &PointSet, p: f64) -> Result<()> {
    check_order(p)?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    if !a.is_uniform() || !b.is_uniform() {
        return Err(Error::NonUniformWeights);
    }
    Ok(())
}

/// Exact `W_p` in one dimension by matching sorted supports.
pub fn exact_1d(a: &PointSet, b: &PointSet, p: f64) -> Result<f64> {
    if a.dim() != 1 {
        return Err(Error::invalid(format!(
            "exact_1d needs 1-D points, got d = {}",
            a.dim()
        )));
    }
    check_oracle_inputs(a, b, p)?;
    let mut xs: Vec<f64> = a.points().column(0).to_vec();
    let mut ys: Vec<f64> = b.points().column(0).to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let total: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs().powf(p)).sum();
    Ok((total / n).powf(1.0 / p))
}

/// Exact `W_p` via a minimum-cost perfect matching, capped at
/// [`DEFAULT_ORACLE_CAP`] points.
pub fn exact_assignment(a: &PointSet, b: &PointSet, p: f64) -> Result<f64> {
    exact_assignment_capped(a, b, p, DEFAULT_ORACLE_CAP)
}

pub fn exact_assignment_capped(a: &PointSet, b: &PointSet, p: f64, cap: usize) -> Result<f64> {
    check_oracle_inputs(a, b, p)?;
    let n = a.len();
    if n > cap {
        return Err(Error::invalid(format!(
            "oracle cap is {cap} points, got {n}"
        )));
    }
    let cost = cost_dense(a.points().view(), b.points().view(), p);
    let (_, total) = min_cost_assignment(n, &cost);
    Ok((total / n as f64).max(0.0).powf(1.0 / p))
}

/// Hungarian algorithm with potentials, O(n³). `cost` is row-major `n × n`.
/// Returns the column assigned to each row and the total cost.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost must be n x n");
    // 1-based arrays; column 0 is a virtual start node.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if row_of_col[j] > 0 {
            assignment[row_of_col[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (assignment, total)
}
