use ndarray::{Array2, ArrayView2};

use crate::distribution::PointSet;
use crate::error::{Error, Result};

/// `‖x − y‖₂ᵖ`; `p = 2` skips the square root so costs stay exact.
#[inline]
pub(crate) fn ground_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        sq
    } else if p == 1.0 {
        sq.sqrt()
    } else {
        sq.sqrt().powf(p)
    }
}

pub(crate) fn check_order(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "Wasserstein order must be >= 1, got {p}"
        )))
    }
}

/// Row-major `n × m` costs between the rows of two point matrices.
pub(crate) fn cost_dense(a: ArrayView2<f64>, b: ArrayView2<f64>, p: f64) -> Vec<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let a_std = a.as_standard_layout();
    let b_std = b.as_standard_layout();
    let a_s = a_std.as_slice().expect("standard layout");
    let b_s = b_std.as_slice().expect("standard layout");
    let d = a.ncols();
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = &a_s[i * d..(i + 1) * d];
        for j in 0..m {
            out.push(ground_cost(x, &b_s[j * d..(j + 1) * d], p));
        }
    }
    out
}

/// Ground-cost matrix `C[i][j] = ‖aᵢ − bⱼ‖₂ᵖ`.
pub fn cost_matrix(a: &PointSet, b: &PointSet, p: f64) -> Result<Array2<f64>> {
    check_order(p)?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let data = cost_dense(a.points().view(), b.points().view(), p);
    Ok(Array2::from_shape_vec((a.len(), b.len()), data).expect("shape matches"))
}
