use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, ArrayView1, ArrayView2};

use super::SparseLinearFit;
use crate::data::gram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    /// Stop sweeping once no scaled coordinate moves by more than this.
    pub change_tol: f64,
    /// Accept the fit once the recomputed KKT residual is below this.
    pub kkt_tol: f64,
    /// Coordinate held at zero and ignored by the KKT check (node-wise fits).
    pub exclude: Option<usize>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { max_sweeps: 100_000, change_tol: 1e-12, kkt_tol: 1e-7, exclude: None }
    }
}

/// Lasso `(1/2n)‖y − Xθ‖² + λ‖θ‖₁` on a design matrix.
pub fn fit_lasso(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64) -> Result<SparseLinearFit> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} rows but y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("lasso needs at least one row".into()));
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) || !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Domain("lasso inputs must be finite with lambda >= 0".into()));
    }
    let s = gram(x);
    let c = x.t().dot(&y) / x.nrows() as f64;
    Ok(lasso_gram(s.view(), c.view(), lambda, None, &LassoOptions::default()))
}

/// Lasso in sufficient-statistic form: minimizes `½θᵀSθ − cᵀθ + λ‖θ‖₁`.
pub fn lasso_gram(
    s: ArrayView2<'_, f64>,
    c: ArrayView1<'_, f64>,
    lambda: f64,
    warm: Option<ArrayView1<'_, f64>>,
    opts: &LassoOptions,
) -> SparseLinearFit {
    let theta = match warm {
        Some(w) => w.to_owned(),
        None => Array1::zeros(c.len()),
    };
    Solver::new(s, c, theta, opts).run(lambda, None)
}

/// Same as [`lasso_gram`] but records the objective after every sweep.
pub fn lasso_gram_traced(
    s: ArrayView2<'_, f64>,
    c: ArrayView1<'_, f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> (SparseLinearFit, Vec<f64>) {
    let mut trace = Vec::new();
    let fit = Solver::new(s, c, Array1::zeros(c.len()), opts).run(lambda, Some(&mut trace));
    (fit, trace)
}

/// Descending λ path over one Gram problem with warm starts.
pub struct LassoPath<'a> {
    solver: Solver<'a>,
}

impl<'a> LassoPath<'a> {
    pub fn new(s: ArrayView2<'a, f64>, c: ArrayView1<'a, f64>, opts: &LassoOptions) -> Self {
        Self { solver: Solver::new(s, c, Array1::zeros(c.len()), opts) }
    }

    pub fn fit(&mut self, lambda: f64) -> SparseLinearFit {
        self.solver.run(lambda, None)
    }

    /// Smallest λ whose solution is zero.
    pub fn lambda_max(&self) -> f64 {
        self.solver
            .c
            .iter()
            .enumerate()
            .filter(|&(j, _)| Some(j) != self.solver.opts.exclude)
            .fold(0.0, |m, (_, v)| m.max(v.abs()))
    }
}

/// Active-set sweeps between attempts at an exact solve.
const NEWTON_EVERY: usize = 10;
/// Column updates applied to a cached factor before it is rebuilt.
const REFACTOR_AFTER: usize = 32;

/// Cholesky factor of `S_AA` with `cols` the active coordinates in factor order.
struct ActiveFactor {
    cols: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
    updates: usize,
}

struct Solver<'a> {
    s: ArrayView2<'a, f64>,
    c: ArrayView1<'a, f64>,
    theta: Array1<f64>,
    grad: Array1<f64>,
    opts: LassoOptions,
    factor: Option<ActiveFactor>,
}

impl<'a> Solver<'a> {
    fn new(s: ArrayView2<'a, f64>, c: ArrayView1<'a, f64>, mut theta: Array1<f64>, opts: &LassoOptions) -> Self {
        if let Some(k) = opts.exclude {
            theta[k] = 0.0;
        }
        let grad = &c - &s.dot(&theta);
        Self { s, c, theta, grad, opts: *opts, factor: None }
    }

    fn refresh_gradient(&mut self) {
        self.grad = &self.c - &self.s.dot(&self.theta);
    }

    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let sjj = self.s[[j, j]];
        if sjj <= 0.0 {
            return 0.0;
        }
        let old = self.theta[j];
        let z = self.grad[j] + sjj * old;
        let new = soft_threshold(z, lambda) / sjj;
        let delta = new - old;
        if delta != 0.0 {
            self.theta[j] = new;
            self.grad.scaled_add(-delta, &self.s.row(j));
        }
        delta.abs() * sjj.sqrt()
    }

    fn sweep(&mut self, coords: &[usize], lambda: f64) -> f64 {
        let mut change: f64 = 0.0;
        for &j in coords {
            change = change.max(self.update(j, lambda));
        }
        change
    }

    fn objective(&self, lambda: f64) -> f64 {
        let quad = self.theta.dot(&self.s.dot(&self.theta));
        0.5 * quad - self.c.dot(&self.theta) + lambda * self.theta.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn kkt_violation(&self, lambda: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, (&t, &g)) in self.theta.iter().zip(self.grad.iter()).enumerate() {
            if Some(j) == self.opts.exclude || self.s[[j, j]] <= 0.0 {
                continue;
            }
            let v = if t != 0.0 {
                (g - lambda * t.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn fresh_factor(&self, active: &[usize]) -> Option<ActiveFactor> {
        let k = active.len();
        let m = DMatrix::from_fn(k, k, |a, b| self.s[[active[a], active[b]]]);
        m.cholesky().map(|chol| ActiveFactor { cols: active.to_vec(), chol, updates: 0 })
    }

    /// Factor for the sorted set `active`, obtained from the cached one by
    /// column deletions and appends when that is cheaper than refactoring.
    fn factor_for(&mut self, active: &[usize]) -> Option<ActiveFactor> {
        let Some(mut f) = self.factor.take() else {
            return self.fresh_factor(active);
        };
        let removed = f.cols.iter().filter(|j| active.binary_search(j).is_err()).count();
        let added = active.len() + removed - f.cols.len();
        if f.updates + removed + added > REFACTOR_AFTER || removed == f.cols.len() {
            return self.fresh_factor(active);
        }
        for idx in (0..f.cols.len()).rev() {
            if active.binary_search(&f.cols[idx]).is_err() {
                f.chol = f.chol.remove_column(idx);
                f.cols.remove(idx);
            }
        }
        for &j in active {
            if f.cols.contains(&j) {
                continue;
            }
            let k = f.cols.len();
            let col = DVector::from_fn(k + 1, |a, _| if a < k { self.s[[f.cols[a], j]] } else { self.s[[j, j]] });
            let next = f.chol.insert_column(k, col);
            let pivot = next.l_dirty()[(k, k)];
            if !(pivot.is_finite() && pivot > 0.0) {
                return self.fresh_factor(active);
            }
            f.chol = next;
            f.cols.push(j);
        }
        f.updates += removed + added;
        Some(f)
    }

    /// Active-set step on the current sign pattern: solve
    /// `S_AA θ_A = c_A − λ·sign(θ_A)` and move toward the solution, stopping
    /// at the first coordinate that would change sign, zeroing it and
    /// re-solving. Along each segment the objective is a convex quadratic
    /// decreasing toward its minimizer, so it never increases.
    fn newton_step(&mut self, lambda: f64) -> bool {
        let mut active: Vec<usize> = (0..self.theta.len()).filter(|&j| self.theta[j] != 0.0).collect();
        let mut moved = false;
        while !active.is_empty() {
            let Some(f) = self.factor_for(&active) else {
                break;
            };
            let k = f.cols.len();
            let rhs = DVector::from_fn(k, |a, _| self.c[f.cols[a]] - lambda * self.theta[f.cols[a]].signum());
            let sol = f.chol.solve(&rhs);
            if !sol.iter().all(|v| v.is_finite()) {
                break;
            }
            let crossing: Vec<Option<f64>> = f
                .cols
                .iter()
                .enumerate()
                .map(|(a, &j)| {
                    let old = self.theta[j];
                    (sol[a] * old.signum() <= 0.0).then(|| old / (old - sol[a]))
                })
                .collect();
            let t = crossing.iter().flatten().fold(1.0, |m: f64, &c| m.min(c));
            for (a, &j) in f.cols.iter().enumerate() {
                if crossing[a].is_some_and(|c| c <= t) {
                    self.theta[j] = 0.0;
                } else {
                    self.theta[j] += t * (sol[a] - self.theta[j]);
                }
            }
            self.factor = Some(f);
            moved = true;
            if t >= 1.0 {
                break;
            }
            active.retain(|&j| self.theta[j] != 0.0);
        }
        if moved {
            self.refresh_gradient();
        }
        moved
    }

    fn run(&mut self, lambda: f64, mut trace: Option<&mut Vec<f64>>) -> SparseLinearFit {
        let all: Vec<usize> = (0..self.theta.len()).filter(|&j| Some(j) != self.opts.exclude).collect();
        let mut sweeps = 0;
        let mut converged = false;
        let mut violation = f64::INFINITY;
        let scale = 1.0 + crate::linalg::max_abs(self.c.iter().cloned());
        let change_tol = self.opts.change_tol * scale;

        while sweeps < self.opts.max_sweeps {
            let change = self.sweep(&all, lambda);
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(lambda));
            }
            if change <= change_tol || self.newton_step(lambda) {
                self.refresh_gradient();
                violation = self.kkt_violation(lambda);
                if violation <= self.opts.kkt_tol {
                    converged = true;
                    break;
                }
                continue;
            }
            let active: Vec<usize> = all.iter().copied().filter(|&j| self.theta[j] != 0.0).collect();
            let mut inner = 0;
            while sweeps < self.opts.max_sweeps {
                let change = self.sweep(&active, lambda);
                sweeps += 1;
                inner += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.objective(lambda));
                }
                if change <= change_tol || (inner % NEWTON_EVERY == 0 && self.newton_step(lambda)) {
                    break;
                }
            }
        }
        if !converged {
            self.refresh_gradient();
            violation = self.kkt_violation(lambda);
        }
        SparseLinearFit::new(self.theta.clone(), lambda, sweeps, converged, violation)
    }
}

pub(crate) fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}
