//! Symmetric eigensolvers for small dense matrices: cyclic Jacobi, and an
//! eigenvalues-only Householder + QL path.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Sweep cap before the solver gives up.
pub const MAX_SWEEPS: usize = 50;

/// Off-diagonal Frobenius mass at which iteration stops, relative to `‖A‖_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigen-decomposition `A = Q Λ Qᵀ` of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    /// Sorted descending.
    pub eigenvalues: Array1<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: Array2<f64>,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Q f(Λ) Qᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let d = self.dim();
        let q = &self.eigenvectors;
        let mapped: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += q[[i, k]] * mapped[k] * q[[j, k]];
                }
                out[[i, j]] = s;
                out[[j, i]] = s;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.reconstruct_with(|l| l)
    }
}

/// Copy of `a` with `(A + Aᵀ)/2`, row-major.
fn symmetrized(a: ArrayView2<f64>) -> Result<(usize, Vec<f64>)> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::DimensionMismatch(n, m));
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            if !v.is_finite() {
                return Err(Error::NonFinite("symmetric matrix"));
            }
            out[i * n + j] = v;
        }
    }
    Ok((n, out))
}

/// Runs cyclic Jacobi sweeps on the row-major symmetric matrix `a` in place,
/// leaving the eigenvalues on its diagonal. When `v` is given it must hold the
/// identity on entry and accumulates the rotations as columns.
pub(crate) fn jacobi_in_place(n: usize, a: &mut [f64], mut v: Option<&mut [f64]>) -> Result<()> {
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 || n < 2 {
        return Ok(());
    }
    let threshold = OFF_DIAGONAL_TOL * frob;

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= threshold {
            return Ok(());
        }

        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }

                if let Some(v) = v.as_deref_mut() {
                    for r in 0..n {
                        let vrp = v[r * n + p];
                        let vrq = v[r * n + q];
                        v[r * n + p] = c * vrp - s * vrq;
                        v[r * n + q] = s * vrp + c * vrq;
                    }
                }
            }
        }
    }

    let mut off = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            off += 2.0 * a[p * n + q] * a[p * n + q];
        }
    }
    if off.sqrt() <= threshold {
        Ok(())
    } else {
        Err(Error::EigenFailed(MAX_SWEEPS))
    }
}

/// QL iterations per eigenvalue before giving up.
const MAX_QL_ITER: usize = 60;

/// Eigenvalues (unsorted) of the row-major symmetric matrix `a`, by
/// Householder reduction to tridiagonal form and implicit-shift QL. Only the
/// lower triangle is read; `a` is overwritten.
pub(crate) fn tridiagonal_eigvals(n: usize, a: &mut [f64]) -> Result<Vec<f64>> {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i * n + k].abs()).sum();
            if scale == 0.0 {
                e[i] = a[i * n + l];
            } else {
                let mut h = 0.0;
                for k in 0..=l {
                    a[i * n + k] /= scale;
                    h += a[i * n + k] * a[i * n + k];
                }
                let f = a[i * n + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i * n + l] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j * n + k] * a[i * n + k];
                    }
                    for k in (j + 1)..=l {
                        g += a[k * n + j] * a[i * n + k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i * n + j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i * n + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j * n + k] -= f * e[k] + g * a[i * n + k];
                    }
                }
            }
        } else {
            e[i] = a[i * n + l];
        }
    }
    for i in 0..n {
        d[i] = a[i * n + i];
    }
    // e[i] couples rows i-1 and i; shift so e[i] couples i and i+1.
    for i in 1..n {
        e[i - 1] = e[i];
    }
    if n > 0 {
        e[n - 1] = 0.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITER {
                return Err(Error::EigenFailed(iter));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}

/// Eigen-decomposition of a symmetric matrix. The input is symmetrized first.
pub fn sym_eig(a: ArrayView2<f64>) -> Result<SymEig> {
    let (n, mut work) = symmetrized(a)?;
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    jacobi_in_place(n, &mut work, Some(&mut v))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work[j * n + j].total_cmp(&work[i * n + i]).then(i.cmp(&j)));

    let eigenvalues = Array1::from_iter(order.iter().map(|&k| work[k * n + k]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[[r, col]] = v[r * n + k];
        }
    }
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only, sorted descending.
pub fn sym_eigvals(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    let (n, mut work) = symmetrized(a)?;
    jacobi_in_place(n, &mut work, None)?;
    let mut vals: Vec<f64> = (0..n).map(|k| work[k * n + k]).collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    Ok(Array1::from(vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let g = Array2::from_shape_fn((d, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let mut a = g.dot(&g.t());
        for i in 0..d {
            a[[i, i]] += 0.1;
        }
        a
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let e = sym_eig(Array2::<f64>::eye(4).view()).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn diagonal_gives_axis_vectors() {
        let a = array![[1.0, 0.0], [0.0, 3.0]];
        let e = sym_eig(a.view()).unwrap();
        assert_eq!(e.eigenvalues.to_vec(), vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors[[1, 0]].abs(), 1.0);
        assert_eq!(e.eigenvectors[[0, 1]].abs(), 1.0);
    }

    #[test]
    fn random_spd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in [2, 5, 10, 30] {
            let a = random_spd(d, &mut rng);
            let e = sym_eig(a.view()).unwrap();
            let qtq = e.eigenvectors.t().dot(&e.eigenvectors) - Array2::<f64>::eye(d);
            assert!(max_abs(&qtq) <= 1e-9, "orthogonality {}", max_abs(&qtq));
            let resid = e.reconstruct() - &a;
            assert!(
                max_abs(&resid) <= 1e-8 * max_abs(&a),
                "residual {}",
                max_abs(&resid)
            );
            for w in e.eigenvalues.windows(2) {
                assert!(w[0] >= w[1]);
            }
            let vals = sym_eigvals(a.view()).unwrap();
            for (x, y) in vals.iter().zip(e.eigenvalues.iter()) {
                assert!((x - y).abs() <= 1e-10 * max_abs(&a));
            }
        }
    }

    #[test]
    fn indefinite_and_zero() {
        let a = array![[0.0, 2.0], [2.0, 0.0]];
        let e = sym_eig(a.view()).unwrap();
        assert!((e.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] + 2.0).abs() < 1e-14);
        let z = sym_eig(Array2::<f64>::zeros((3, 3)).view()).unwrap();
        assert!(z.eigenvalues.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn rejects_non_square_and_nan() {
        assert!(sym_eig(Array2::<f64>::zeros((2, 3)).view()).is_err());
        let a = array![[f64::NAN, 0.0], [0.0, 1.0]];
        assert!(matches!(sym_eig(a.view()), Err(Error::NonFinite(_))));
    }
    #[test]
    fn tridiagonal_ql_matches_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for d in [1usize, 2, 3, 7, 20, 50] {
            for _ in 0..3 {
                let g = Array2::from_shape_fn((d, d), |_| rng.random::<f64>() * 2.0 - 1.0);
                let a = &g + &g.t();
                let mut want = sym_eigvals(a.view()).unwrap().to_vec();
                let mut work: Vec<f64> = a.iter().copied().collect();
                let mut got = tridiagonal_eigvals(d, &mut work).unwrap();
                got.sort_by(|x, y| y.total_cmp(x));
                want.sort_by(|x, y| y.total_cmp(x));
                for (x, y) in got.iter().zip(&want) {
                    assert!((x - y).abs() <= 1e-10 * max_abs(&a).max(1.0), "{x} vs {y}");
                }
            }
        }
        let mut zero = vec![0.0; 9];
        assert_eq!(tridiagonal_eigvals(3, &mut zero).unwrap(), vec![0.0; 3]);
        let mut diag = vec![3.0, 0.0, 0.0, 1.0];
        let mut v = tridiagonal_eigvals(2, &mut diag).unwrap();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![1.0, 3.0]);
    }
}
