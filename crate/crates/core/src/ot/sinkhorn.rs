//! Entropic optimal transport by log-domain Sinkhorn iterations.
//!
//! Potentials are kept in the log domain throughout, so tiny regularization
//! values do not underflow. The solver anneals the regularization from the
//! scale of the cost matrix down to the target value, each stage
//! warm-starting the next. Within a stage, plain Sinkhorn sweeps hand over to
//! damped Newton steps on the semi-dual once they stop converging quickly
//! (small problems only). Neither changes the fixed point; together they cut
//! the work at small `reg` by orders of magnitude.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terms this far below the running maximum of a log-sum-exp are dropped;
/// `e^{-50}` is below double precision relative to the leading term.
const LSE_CUTOFF: f64 = -50.0;

/// `exp` of anything below this is zero in double precision.
const EXP_UNDERFLOW: f64 = -746.0;

/// Geometric decrease of the regularization between annealing stages.
const ANNEAL_FACTOR: f64 = 0.1;

/// Marginal violation at which an intermediate annealing stage hands over.
const STAGE_TOL: f64 = 1e-3;

/// Problems with at most this many rows finish with Newton steps on the
/// semi-dual. Plain Sinkhorn needs a number of sweeps that grows like
/// `exp(gap/reg)` once the plan is close to a permutation.
const NEWTON_MAX_ROWS: usize = 128;

const NEWTON_MAX_HALVINGS: usize = 40;

/// Sinkhorn sweeps in a stage before switching to Newton steps, and between
/// Newton attempts after a stalled Newton phase.
const NEWTON_RETRY_SWEEPS: usize = 5;

/// Plan entries below this fraction of their column are left out of the
/// Newton system; the couplings they carry sit far below `PIVOT_FLOOR`.
const SUPPORT_FLOOR: f64 = 1e-20;

/// Relative size below which a Newton pivot is treated as zero.
const PIVOT_FLOOR: f64 = 1e-13;

/// Scalings are folded back into the potentials once one of them leaves
/// `[e^-ABSORB_LOG, e^ABSORB_LOG]`.
const ABSORB_LOG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostNormalization {
    /// Costs are used as given.
    #[default]
    None,
    /// Costs are divided by their median before solving; the reported value
    /// is still measured on the raw costs.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    /// Weight of the entropy term.
    pub reg: f64,
    pub max_iter: usize,
    /// L∞ bound on the marginal violation.
    pub tol: f64,
    /// Order of the Wasserstein distance.
    pub p: f64,
    pub normalize_cost: CostNormalization,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            reg: 0.01,
            max_iter: 10_000,
            tol: 1e-9,
            p: 2.0,
            normalize_cost: CostNormalization::None,
        }
    }
}

impl SinkhornConfig {
    pub fn with_reg(reg: f64) -> Self {
        SinkhornConfig {
            reg,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reg > 0.0) || !self.reg.is_finite() {
            return Err(Error::invalid(format!(
                "reg must be positive, got {}",
                self.reg
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::invalid(format!("p must be >= 1, got {}", self.p)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Coupling returned by [`sinkhorn`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl TransportPlan {
    /// L∞ distance between the plan's marginals and their targets.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self.plan.sum_axis(ndarray::Axis(1));
        let cols = self.plan.sum_axis(ndarray::Axis(0));
        let r = rows
            .iter()
            .zip(self.row_marginal.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let c = cols
            .iter()
            .zip(self.col_marginal.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        r.max(c)
    }
}

/// Transport cost of the regularized plan plus convergence information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornValue {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Median of the entries; for an even count, the lower middle element.
pub(crate) fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *m
}

fn validate_inputs(cost: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    let (n, m) = cost.dim();
    if a.len() != n {
        return Err(Error::SizeMismatch(n, a.len()));
    }
    if b.len() != m {
        return Err(Error::SizeMismatch(m, b.len()));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyDistribution);
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    for w in [a, b] {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let s = w.sum();
        if (s - 1.0).abs() > crate::distribution::WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Solves entropic OT between weights `a` (rows) and `b` (columns) under
/// `cost`. The returned value is `Σ πᵢⱼ Cᵢⱼ` on the raw costs, without the
/// entropy term. Running out of iterations is reported through
/// `converged = false`, not as an error.
pub fn sinkhorn(
    cost: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, f64)> {
    cfg.validate()?;
    validate_inputs(cost, a, b)?;
    let (n, m) = cost.dim();

    let rows: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| b[j] > 0.0).collect();
    let sub_cost: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost[[i, j]]))
        .collect();
    let sub_a: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let sub_b: Vec<f64> = cols.iter().map(|&j| b[j]).collect();

    let mut solver = LogSinkhorn::new(&sub_cost, &sub_a, &sub_b, cfg);
    let outcome = solver.run()?;

    let mut plan = Array2::<f64>::zeros((n, m));
    let mut value = 0.0;
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            let p = solver.entry(si, sj);
            plan[[i, j]] = p;
            value += p * cost[[i, j]];
        }
    }
    Ok((
        TransportPlan {
            plan,
            row_marginal: a.to_owned(),
            col_marginal: b.to_owned(),
            converged: outcome.converged,
            iterations: outcome.iterations,
        },
        value,
    ))
}

/// Like [`sinkhorn`] but without materializing the plan. `cost` is row-major
/// `a.len() × b.len()` and all weights must be positive.
pub(crate) fn sinkhorn_value_dense(
    cost: &[f64],
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<SinkhornValue> {
    let mut solver = LogSinkhorn::new(cost, a, b, cfg);
    let outcome = solver.run()?;
    let m = b.len();
    let mut value = 0.0;
    for i in 0..a.len() {
        for j in 0..m {
            value += solver.entry(i, j) * cost[i * m + j];
        }
    }
    Ok(SinkhornValue {
        value,
        converged: outcome.converged,
        iterations: outcome.iterations,
    })
}

struct Outcome {
    converged: bool,
    iterations: usize,
}

/// Scaled potentials `φ = f/ε`, `ψ = g/ε` with plan `πᵢⱼ = exp(φᵢ + ψⱼ − Cᵢⱼ/ε)`.
struct LogSinkhorn<'a> {
    cost: &'a [f64],
    n: usize,
    m: usize,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    a: &'a [f64],
    /// Divisor applied to the raw costs before regularization.
    cost_scale: f64,
    target_reg: f64,
    tol: f64,
    max_iter: usize,
    eps: f64,
    phi: Vec<f64>,
    psi: Vec<f64>,
    /// `C/(scale·ε)` row-major and its transpose for the current stage.
    k: Vec<f64>,
    kt: Vec<f64>,
}

impl<'a> LogSinkhorn<'a> {
    fn new(cost: &'a [f64], a: &'a [f64], b: &'a [f64], cfg: &SinkhornConfig) -> Self {
        let cost_scale = match cfg.normalize_cost {
            CostNormalization::None => 1.0,
            CostNormalization::Median => {
                let med = lower_median(cost);
                if med > 0.0 {
                    med
                } else {
                    1.0
                }
            }
        };
        let n = a.len();
        let m = b.len();
        LogSinkhorn {
            cost,
            n,
            m,
            log_a: a.iter().map(|x| x.ln()).collect(),
            log_b: b.iter().map(|x| x.ln()).collect(),
            a,
            cost_scale,
            target_reg: cfg.reg,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            eps: f64::NAN,
            phi: vec![0.0; n],
            psi: vec![0.0; m],
            k: vec![0.0; n * m],
            kt: vec![0.0; n * m],
        }
    }

    fn set_eps(&mut self, eps: f64) {
        if self.eps.is_finite() {
            let ratio = self.eps / eps;
            self.phi.iter_mut().for_each(|x| *x *= ratio);
            self.psi.iter_mut().for_each(|x| *x *= ratio);
        }
        self.eps = eps;
        let inv = 1.0 / (eps * self.cost_scale);
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            for j in 0..m {
                let v = self.cost[i * m + j] * inv;
                self.k[i * m + j] = v;
                self.kt[j * n + i] = v;
            }
        }
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        (self.phi[i] + self.psi[j] - self.k[i * self.m + j]).exp()
    }

    fn run(&mut self) -> Result<Outcome> {
        let max_cost = self.cost.iter().fold(0.0f64, |x, &c| x.max(c)) / self.cost_scale;
        let mut schedule = Vec::new();
        let mut e = max_cost;
        while e > self.target_reg {
            schedule.push(e);
            e *= ANNEAL_FACTOR;
        }
        schedule.push(self.target_reg);

        let mut new_phi = vec![0.0; self.n];
        let mut iterations = 0usize;
        let last = schedule.len() - 1;
        for (stage, &eps) in schedule.iter().enumerate() {
            self.set_eps(eps);
            let is_final = stage == last;
            let stage_tol = if is_final {
                self.tol
            } else {
                STAGE_TOL.max(self.tol)
            };
            let newton = self.n >= 2 && self.n <= NEWTON_MAX_ROWS;
            let mut try_newton = false;
            let mut sweeps = 0usize;
            self.update_psi();
            if self.n > NEWTON_MAX_ROWS {
                let reached = self.scaling_stage(stage_tol, &mut iterations)?;
                if !reached || is_final {
                    self.check_finite()?;
                    return Ok(Outcome {
                        converged: reached,
                        iterations,
                    });
                }
                continue;
            }
            loop {
                if try_newton {
                    if self.newton_polish(stage_tol, &mut iterations)? {
                        if is_final {
                            return Ok(Outcome {
                                converged: true,
                                iterations,
                            });
                        }
                        break;
                    }
                    try_newton = false;
                    sweeps = 0;
                }
                let err = self.propose_phi(&mut new_phi);
                if !err.is_finite() {
                    return Err(Error::NumericalOverflow);
                }
                if err <= stage_tol {
                    if is_final {
                        self.check_finite()?;
                        return Ok(Outcome {
                            converged: true,
                            iterations,
                        });
                    }
                    break;
                }
                if iterations >= self.max_iter {
                    self.check_finite()?;
                    return Ok(Outcome {
                        converged: false,
                        iterations,
                    });
                }
                std::mem::swap(&mut self.phi, &mut new_phi);
                self.update_psi();
                iterations += 1;
                sweeps += 1;
                if newton && sweeps >= NEWTON_RETRY_SWEEPS {
                    try_newton = true;
                }
            }
        }
        unreachable!("final stage always returns")
    }

    /// Sinkhorn sweeps in scaling form for large problems: the plan is
    /// `diag(u) K diag(v)` with `Kᵢⱼ = exp(φᵢ + ψⱼ − kᵢⱼ)` built once, so a
    /// sweep costs two matrix-vector products instead of `2nm` exponentials.
    /// The iterates are those of the log-domain sweep. Returns whether
    /// `tol` was reached before the iteration budget ran out.
    fn scaling_stage(&mut self, tol: f64, iterations: &mut usize) -> Result<bool> {
        let (n, m) = (self.n, self.m);
        let b: Vec<f64> = self.log_b.iter().map(|x| x.exp()).collect();
        let mut kernel = vec![0.0; n * m];
        let mut u = vec![1.0; n];
        let mut v = vec![1.0; m];
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; m];
        let mut fresh = false;
        let lo = (-ABSORB_LOG).exp();
        let hi = ABSORB_LOG.exp();
        loop {
            if !fresh {
                self.absorb(&mut u, &mut v);
                self.fill_kernel(&mut kernel);
                fresh = true;
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let krow = &kernel[i * m..(i + 1) * m];
                rows[i] = krow.iter().zip(&v).map(|(k, x)| k * x).sum();
                err = err.max((u[i] * rows[i] - self.a[i]).abs());
            }
            if !err.is_finite() {
                return Err(Error::NumericalOverflow);
            }
            if err <= tol || *iterations >= self.max_iter {
                self.absorb(&mut u, &mut v);
                return Ok(err <= tol);
            }
            if rows.iter().any(|&r| !(r > 0.0)) {
                // A row lost all its mass to underflow; rebuild around the
                // current potentials.
                self.absorb(&mut u, &mut v);
                self.update_psi();
                fresh = false;
                continue;
            }
            for i in 0..n {
                u[i] = self.a[i] / rows[i];
            }
            cols.iter_mut().for_each(|c| *c = 0.0);
            for i in 0..n {
                let ui = u[i];
                let krow = &kernel[i * m..(i + 1) * m];
                for (c, k) in cols.iter_mut().zip(krow) {
                    *c += ui * k;
                }
            }
            for j in 0..m {
                v[j] = b[j] / cols[j];
            }
            *iterations += 1;
            let out_of_range = |x: &f64| !(*x >= lo && *x <= hi);
            if u.iter().any(out_of_range) || v.iter().any(out_of_range) {
                if v.iter().any(|x| !x.is_finite()) {
                    // An empty column; recompute ψ in the log domain instead.
                    v.iter_mut().for_each(|x| *x = 1.0);
                    self.absorb(&mut u, &mut v);
                    self.update_psi();
                }
                fresh = false;
            }
        }
    }

    fn absorb(&mut self, u: &mut [f64], v: &mut [f64]) {
        for (p, x) in self.phi.iter_mut().zip(u.iter_mut()) {
            *p += x.ln();
            *x = 1.0;
        }
        for (p, x) in self.psi.iter_mut().zip(v.iter_mut()) {
            *p += x.ln();
            *x = 1.0;
        }
    }

    fn fill_kernel(&self, kernel: &mut [f64]) {
        let m = self.m;
        for (i, row) in kernel.chunks_mut(m).enumerate() {
            let krow = &self.k[i * m..(i + 1) * m];
            for j in 0..m {
                let e = self.phi[i] + self.psi[j] - krow[j];
                row[j] = if e < EXP_UNDERFLOW { 0.0 } else { e.exp() };
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self
            .phi
            .iter()
            .chain(self.psi.iter())
            .all(|x| x.is_finite())
        {
            Ok(())
        } else {
            Err(Error::NumericalOverflow)
        }
    }

    /// Computes the row update into `out` and returns the row-marginal
    /// violation of the current state (whose columns are exact).
    fn propose_phi(&self, out: &mut [f64]) -> f64 {
        let m = self.m;
        let mut err = 0.0f64;
        for i in 0..self.n {
            let lse = log_sum_exp_shifted(&self.psi, &self.k[i * m..(i + 1) * m]);
            let next = self.log_a[i] - lse;
            let row_mass = self.a[i] * (self.phi[i] - next).exp();
            err = err.max((row_mass - self.a[i]).abs());
            out[i] = next;
        }
        err
    }

    fn update_psi(&mut self) {
        let mut psi = std::mem::take(&mut self.psi);
        self.psi_for(&self.phi, &mut psi);
        self.psi = psi;
    }

    /// Column potentials that make the column marginals exact for `phi`.
    fn psi_for(&self, phi: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (j, o) in out.iter_mut().enumerate() {
            let lse = log_sum_exp_shifted(phi, &self.kt[j * n..(j + 1) * n]);
            *o = self.log_b[j] - lse;
        }
    }

    /// Fills `plan` for `(phi, psi)`, writes `a − rowsums` into `grad` and
    /// returns `(‖grad‖∞, ‖grad‖₂²)`.
    fn row_residual(
        &self,
        phi: &[f64],
        psi: &[f64],
        plan: &mut [f64],
        grad: &mut [f64],
    ) -> (f64, f64) {
        let m = self.m;
        let mut linf = 0.0f64;
        let mut l2 = 0.0;
        for i in 0..self.n {
            let row = &mut plan[i * m..(i + 1) * m];
            let krow = &self.k[i * m..(i + 1) * m];
            let mut r = 0.0;
            for j in 0..m {
                let e = phi[i] + psi[j] - krow[j];
                let v = if e < EXP_UNDERFLOW { 0.0 } else { e.exp() };
                row[j] = v;
                r += v;
            }
            let g = self.a[i] - r;
            grad[i] = g;
            linf = linf.max(g.abs());
            l2 += g * g;
        }
        (linf, l2)
    }

    /// Damped Newton iterations on the semi-dual `φ ↦ ⟨a,φ⟩ + ⟨b,ψ(φ)⟩`,
    /// keeping columns exact. The merit function is the squared row residual,
    /// for which the Newton direction is always a descent direction. Returns
    /// false when the step stalls or the budget runs out, leaving a valid
    /// state for plain Sinkhorn to continue from.
    fn newton_polish(&mut self, tol: f64, iterations: &mut usize) -> Result<bool> {
        let (n, m) = (self.n, self.m);
        let k = n - 1;
        let mut plan = vec![0.0; n * m];
        let mut grad = vec![0.0; n];
        let mut weights = vec![0.0; k * k];
        let mut ground = vec![0.0; k];
        let mut delta = vec![0.0; n];
        let mut trial_phi = vec![0.0; n];
        let mut trial_psi = vec![0.0; m];
        let mut trial_plan = vec![0.0; n * m];
        let mut trial_grad = vec![0.0; n];
        let mut support: Vec<usize> = Vec::with_capacity(n);

        let (mut linf, mut l2) = self.row_residual(&self.phi, &self.psi, &mut plan, &mut grad);
        loop {
            if !linf.is_finite() {
                return Err(Error::NumericalOverflow);
            }
            if linf <= tol {
                return Ok(true);
            }
            if *iterations >= self.max_iter {
                return Ok(false);
            }

            // Newton system: the weighted Laplacian of the row-coupling graph
            // `Wᵢₗ = Σⱼ πᵢⱼ πₗⱼ / cⱼ`, grounded at row 0.
            // The plan is sparse at small reg, so accumulate column by column
            // over the rows that carry mass.
            weights.iter_mut().for_each(|x| *x = 0.0);
            ground.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..m {
                support.clear();
                let mut c = 0.0;
                let total: f64 = (0..n).map(|i| plan[i * m + j]).sum();
                for i in 0..n {
                    let v = plan[i * m + j];
                    if v > SUPPORT_FLOOR * total {
                        support.push(i);
                        c += v;
                    }
                }
                for (x, &i) in support.iter().enumerate() {
                    let pi = plan[i * m + j] / c;
                    for &l in &support[..x] {
                        let w = pi * plan[l * m + j];
                        if l == 0 {
                            ground[i - 1] += w;
                        } else {
                            weights[(i - 1) * k + (l - 1)] += w;
                            weights[(l - 1) * k + (i - 1)] += w;
                        }
                    }
                }
            }
            delta[0] = 0.0;
            delta[1..].copy_from_slice(&grad[1..]);
            laplacian_solve(k, &mut weights, &mut ground, &mut delta[1..]);

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..NEWTON_MAX_HALVINGS {
                for i in 0..n {
                    trial_phi[i] = self.phi[i] + t * delta[i];
                }
                self.psi_for(&trial_phi, &mut trial_psi);
                let (tinf, tl2) =
                    self.row_residual(&trial_phi, &trial_psi, &mut trial_plan, &mut trial_grad);
                if tl2.is_finite() && tl2 <= (1.0 - 1e-4 * t) * l2 {
                    std::mem::swap(&mut self.phi, &mut trial_phi);
                    std::mem::swap(&mut self.psi, &mut trial_psi);
                    std::mem::swap(&mut plan, &mut trial_plan);
                    std::mem::swap(&mut grad, &mut trial_grad);
                    linf = tinf;
                    l2 = tl2;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            *iterations += 1;
            if !accepted {
                return Ok(false);
            }
        }
    }
}

/// Solves `L x = g` for a grounded weighted graph Laplacian given by its
/// symmetric off-diagonal couplings `w` (row-major `k × k`, diagonal ignored)
/// and the couplings `v` to the ground node. Elimination only ever adds
/// nonnegative quantities (the GTH scheme), so weak couplings keep full
/// relative accuracy where a Cholesky factorization would lose them to
/// cancellation. Nodes whose pivot falls below `PIVOT_FLOOR` times the
/// largest coupling are treated as cut off from ground and get `xᵢ = 0`:
/// their residuals are at rounding level, and dividing by such a pivot would
/// produce astronomically large steps. Inputs are overwritten; the solution
/// is left in `g`.
fn laplacian_solve(k: usize, w: &mut [f64], v: &mut [f64], g: &mut [f64]) {
    let scale = w.iter().chain(v.iter()).fold(0.0f64, |x, &y| x.max(y));
    let floor = PIVOT_FLOOR * scale;
    let mut pivots = vec![0.0; k];
    for p in 0..k {
        let mut d = v[p];
        for q in (p + 1)..k {
            d += w[p * k + q];
        }
        if d <= floor {
            continue;
        }
        pivots[p] = d;
        for i in (p + 1)..k {
            let wip = w[i * k + p];
            if wip == 0.0 {
                continue;
            }
            let f = wip / d;
            g[i] += f * g[p];
            v[i] += f * v[p];
            for q in (p + 1)..k {
                if q != i {
                    w[i * k + q] += f * w[p * k + q];
                }
            }
        }
    }
    for p in (0..k).rev() {
        if pivots[p] <= 0.0 {
            g[p] = 0.0;
            continue;
        }
        let mut s = g[p];
        for q in (p + 1)..k {
            s += w[p * k + q] * g[q];
        }
        g[p] = s / pivots[p];
    }
}

/// `log Σⱼ exp(potⱼ − kⱼ)` with terms far below the maximum skipped.
#[inline]
fn log_sum_exp_shifted(pot: &[f64], k: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (p, c) in pot.iter().zip(k) {
        let v = p - c;
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let floor = max + LSE_CUTOFF;
    let mut s = 0.0;
    for (p, c) in pot.iter().zip(k) {
        let v = p - c;
        if v > floor {
            s += (v - max).exp();
        }
    }
    max + s.ln()
}
