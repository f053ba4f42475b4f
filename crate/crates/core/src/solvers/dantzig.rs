//! Dantzig-type problems `min ‖θ‖₁ s.t. ‖Aθ − b‖∞ ≤ λ` as a linear program
//! solved with a dense dual simplex.
//!
//! With `θ = u − w` and slacks `s, s'` the constraints read
//! `A(u − w) + s = λ + b` and `−A(u − w) + s' = λ − b`, all variables
//! nonnegative, cost `1ᵀ(u + w)`. The all-slack basis has nonnegative
//! reduced costs for every λ, so the dual simplex starts there and
//! warm-starts across λ by recomputing only the right-hand side.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::SparseLinearFit;
use crate::error::{Error, Result};
use crate::linalg;

const PIVOT_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 100;
const FEASIBILITY_SLACK: f64 = 1e-6;

/// Dantzig selector for one constraint system, reusable along a λ path.
pub struct DantzigSolver {
    p: usize,
    full: Array2<f64>,
    b: Array1<f64>,
    cost: Array1<f64>,
    tableau: Array2<f64>,
    rhs: Array1<f64>,
    reduced: Array1<f64>,
    basis: Vec<usize>,
    position: Vec<Option<usize>>,
    since_refactor: usize,
    lambda: f64,
}

impl DantzigSolver {
    pub fn new(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p || b.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix is {}x{} and target has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if p == 0 {
            return Err(Error::DimensionMismatch("empty constraint system".into()));
        }
        if !linalg::all_finite(a.iter().chain(b.iter())) {
            return Err(Error::Domain("Dantzig inputs must be finite".into()));
        }
        let m = 2 * p;
        let mut full = Array2::zeros((m, 4 * p));
        full.slice_mut(s![..p, ..p]).assign(&a);
        full.slice_mut(s![..p, p..m]).assign(&(-&a));
        full.slice_mut(s![p.., ..p]).assign(&(-&a));
        full.slice_mut(s![p.., p..m]).assign(&a);
        for i in 0..m {
            full[[i, m + i]] = 1.0;
        }
        let mut cost = Array1::zeros(4 * p);
        cost.slice_mut(s![..m]).fill(1.0);
        let basis: Vec<usize> = (m..2 * m).collect();
        let mut position = vec![None; 2 * m];
        for (r, &j) in basis.iter().enumerate() {
            position[j] = Some(r);
        }
        Ok(Self {
            p,
            tableau: full.clone(),
            full,
            b: b.to_owned(),
            reduced: cost.clone(),
            cost,
            rhs: Array1::zeros(m),
            basis,
            position,
            since_refactor: 0,
            lambda: f64::NAN,
        })
    }

    fn rows(&self) -> usize {
        2 * self.p
    }

    fn original_rhs(&self, lambda: f64) -> Array1<f64> {
        let mut r = Array1::zeros(self.rows());
        for i in 0..self.p {
            r[i] = lambda + self.b[i];
            r[self.p + i] = lambda - self.b[i];
        }
        r
    }

    /// Recomputes the tableau, right-hand side and reduced costs from the
    /// current basis with a fresh LU factorization.
    fn refactor(&mut self) -> Result<()> {
        let m = self.rows();
        let bmat = DMatrix::from_fn(m, m, |i, k| self.full[[i, self.basis[k]]]);
        let lu = bmat.lu();
        let full_na = linalg::to_nalgebra(self.full.view());
        let t = lu.solve(&full_na).ok_or_else(|| Error::NoConvergence {
            stage: "dantzig refactorization".into(),
            iterations: 0,
            violation: f64::INFINITY,
            best_iterate: Vec::new(),
        })?;
        self.tableau = linalg::from_nalgebra(&t);
        let r0 = self.original_rhs(self.lambda);
        let r0_na = nalgebra::DVector::from_iterator(m, r0.iter().cloned());
        let rhs = lu.solve(&r0_na).expect("factorization succeeded above");
        self.rhs = Array1::from_iter(rhs.iter().cloned());
        let cb = Array1::from_iter(self.basis.iter().map(|&j| self.cost[j]));
        self.reduced = &self.cost - &self.tableau.t().dot(&cb);
        for &j in &self.basis {
            self.reduced[j] = 0.0;
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let piv = self.tableau[[r, j]];
        self.tableau.row_mut(r).mapv_inplace(|v| v / piv);
        self.rhs[r] /= piv;
        self.tableau[[r, j]] = 1.0;
        let prow = self.tableau.row(r).to_owned();
        let prhs = self.rhs[r];
        for i in 0..self.rows() {
            if i == r {
                continue;
            }
            let f = self.tableau[[i, j]];
            if f != 0.0 {
                self.tableau.row_mut(i).scaled_add(-f, &prow);
                self.tableau[[i, j]] = 0.0;
                self.rhs[i] -= f * prhs;
            }
        }
        let dj = self.reduced[j];
        if dj != 0.0 {
            self.reduced.scaled_add(-dj, &prow);
        }
        self.reduced[j] = 0.0;
        let leaving = self.basis[r];
        self.position[leaving] = None;
        self.position[j] = Some(r);
        self.basis[r] = j;
        self.since_refactor += 1;
    }

    fn theta(&self) -> Array1<f64> {
        let p = self.p;
        let value = |col: usize| match self.position[col] {
            Some(r) if self.rhs[r].abs() > 1e-13 => self.rhs[r].max(0.0),
            _ => 0.0,
        };
        Array1::from_shape_fn(p, |j| value(j) - value(p + j))
    }

    /// Constraint excess `max(0, ‖Aθ − b‖∞ − λ)`.
    fn excess(&self, theta: &Array1<f64>) -> f64 {
        let a = self.full.slice(s![..self.p, ..self.p]);
        let r = a.dot(theta) - &self.b;
        (linalg::max_abs(r.iter().cloned()) - self.lambda).max(0.0)
    }

    /// Solves at `lambda`, warm-starting from the previous basis.
    pub fn solve(&mut self, lambda: f64) -> Result<SparseLinearFit> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::Infeasible(format!("lambda must be nonnegative, got {lambda}")));
        }
        let first = self.lambda.is_nan();
        self.lambda = lambda;
        if first {
            self.rhs = self.original_rhs(lambda);
        } else {
            let binv = self.tableau.slice(s![.., self.rows()..]);
            self.rhs = binv.dot(&self.original_rhs(lambda));
        }

        let m = self.rows();
        let scale = 1.0 + lambda + linalg::max_abs(self.b.iter().cloned());
        let feas_tol = 1e-10 * scale;
        let bland_after = 50 * m + 1000;
        let max_pivots = 500 * m + 20_000;
        let mut pivots = 0usize;
        let mut refactored_for_check = false;

        loop {
            let bland = pivots >= bland_after;
            let leave = if bland {
                (0..m)
                    .filter(|&r| self.rhs[r] < -feas_tol)
                    .min_by_key(|&r| self.basis[r])
            } else {
                let mut best: Option<usize> = None;
                for r in 0..m {
                    if self.rhs[r] < -feas_tol && best.is_none_or(|b| self.rhs[r] < self.rhs[b]) {
                        best = Some(r);
                    }
                }
                best
            };

            let Some(r) = leave else {
                let theta = self.theta();
                let excess = self.excess(&theta);
                if excess <= FEASIBILITY_SLACK {
                    return Ok(SparseLinearFit::new(theta, lambda, pivots, true, excess));
                }
                if refactored_for_check {
                    return Err(Error::NoConvergence {
                        stage: "dantzig simplex".into(),
                        iterations: pivots,
                        violation: excess,
                        best_iterate: theta.to_vec(),
                    });
                }
                self.refactor()?;
                refactored_for_check = true;
                continue;
            };

            if pivots >= max_pivots {
                let theta = self.theta();
                return Err(Error::NoConvergence {
                    stage: "dantzig simplex".into(),
                    iterations: pivots,
                    violation: self.excess(&theta),
                    best_iterate: theta.to_vec(),
                });
            }

            let row = self.tableau.row(r);
            let mut enter: Option<(usize, f64, f64)> = None;
            for (j, &arj) in row.iter().enumerate() {
                if arj >= -PIVOT_TOL || self.position[j].is_some() {
                    continue;
                }
                let ratio = self.reduced[j].max(0.0) / -arj;
                let better = match enter {
                    None => true,
                    Some((_, best_ratio, best_mag)) => {
                        if bland {
                            ratio < best_ratio
                        } else {
                            ratio < best_ratio - 1e-12
                                || (ratio <= best_ratio + 1e-12 && -arj > best_mag)
                        }
                    }
                };
                if better {
                    enter = Some((j, ratio, -arj));
                }
            }
            let Some((j, _, _)) = enter else {
                if !refactored_for_check && self.since_refactor > 0 {
                    self.refactor()?;
                    refactored_for_check = true;
                    continue;
                }
                return Err(Error::Infeasible(format!(
                    "no θ satisfies ‖Aθ − b‖∞ ≤ {lambda}"
                )));
            };
            self.pivot(r, j);
            pivots += 1;
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
        }
    }
}

/// Minimizes `‖θ‖₁` subject to `‖aθ − b‖∞ ≤ λ`.
pub fn fit_dantzig(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, lambda: f64) -> Result<SparseLinearFit> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Infeasible(format!("lambda must be nonnegative, got {lambda}")));
    }
    if !linalg::is_symmetric(a, 1e-8) {
        return Err(Error::Domain("Dantzig constraint matrix must be symmetric".into()));
    }
    DantzigSolver::new(a, b)?.solve(lambda)
}

/// Fits along `grid` (any order) with warm starts, one fit per grid entry.
pub fn dantzig_path(
    a: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    grid: &[f64],
) -> Result<Vec<SparseLinearFit>> {
    let mut solver = DantzigSolver::new(a, b)?;
    grid.iter().map(|&l| solver.solve(l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Enumerates every basis of the split formulation and returns the best
    /// feasible objective.
    fn vertex_oracle(a: &Array2<f64>, b: &Array1<f64>, lambda: f64) -> f64 {
        let p = a.nrows();
        let m = 2 * p;
        let ncol = 4 * p;
        let mut full = DMatrix::zeros(m, ncol);
        let mut rhs = nalgebra::DVector::zeros(m);
        for i in 0..p {
            for k in 0..p {
                full[(i, k)] = a[[i, k]];
                full[(i, p + k)] = -a[[i, k]];
                full[(p + i, k)] = -a[[i, k]];
                full[(p + i, p + k)] = a[[i, k]];
            }
            full[(i, m + i)] = 1.0;
            full[(p + i, m + p + i)] = 1.0;
            rhs[i] = lambda + b[i];
            rhs[p + i] = lambda - b[i];
        }
        let mut best = f64::INFINITY;
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            let bm = DMatrix::from_fn(m, m, |i, k| full[(i, idx[k])]);
            if bm.determinant().abs() > 1e-10 {
                if let Some(x) = bm.lu().solve(&rhs) {
                    if x.iter().all(|&v| v >= -1e-9) {
                        let obj: f64 = idx.iter().zip(x.iter()).filter(|(&j, _)| j < m).map(|(_, &v)| v).sum();
                        best = best.min(obj);
                    }
                }
            }
            // next combination
            let mut i = m;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < ncol - m + i {
                    break;
                }
            }
            idx[i] += 1;
            for k in i + 1..m {
                idx[k] = idx[k - 1] + 1;
            }
        }
    }

    fn random_psd(rng: &mut ChaCha8Rng, p: usize) -> Array2<f64> {
        let rows = p + 3;
        let x = Array2::from_shape_fn((rows, p), |_| rng.random_range(-1.5..1.5));
        crate::data::gram(x.view())
    }

    #[test]
    fn large_lambda_gives_zero() {
        let a = array![[2.0, 0.5], [0.5, 1.0]];
        let b = array![0.7, -0.3];
        let fit = fit_dantzig(a.view(), b.view(), 0.7).unwrap();
        assert!(fit.coefficients.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_interval() {
        let fit = fit_dantzig(array![[1.0]].view(), array![2.0].view(), 0.5).unwrap();
        assert!((fit.coefficients[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn negative_lambda_is_infeasible() {
        let err = fit_dantzig(array![[1.0]].view(), array![2.0].view(), -0.1).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn zero_lambda_solves_the_system() {
        let a = array![[2.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 1.5]];
        let b = array![1.0, -0.5, 0.25];
        let fit = fit_dantzig(a.view(), b.view(), 0.0).unwrap();
        let exact = linalg::solve(a.view(), b.view()).unwrap();
        for j in 0..3 {
            assert!((fit.coefficients[j] - exact[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_system_without_solution_is_infeasible() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![1.0, -1.0];
        assert!(matches!(fit_dantzig(a.view(), b.view(), 0.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn matches_vertex_enumeration_p3() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..5 {
            let a = random_psd(&mut rng, 3);
            let b = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let lambda = rng.random_range(0.0..0.5) * linalg::max_abs(b.iter().cloned());
            let fit = fit_dantzig(a.view(), b.view(), lambda).unwrap();
            let oracle = vertex_oracle(&a, &b, lambda);
            assert!((fit.l1_norm() - oracle).abs() < 1e-5, "{} vs {oracle}", fit.l1_norm());
        }
    }

    #[test]
    fn path_matches_cold_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_psd(&mut rng, 6);
        let b = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let lmax = linalg::max_abs(b.iter().cloned());
        let grid: Vec<f64> = (0..20).map(|k| lmax * 0.8f64.powi(k)).collect();
        let path = dantzig_path(a.view(), b.view(), &grid).unwrap();
        for (fit, &l) in path.iter().zip(&grid) {
            let cold = fit_dantzig(a.view(), b.view(), l).unwrap();
            assert!((fit.l1_norm() - cold.l1_norm()).abs() < 1e-8);
        }
        // Increasing λ after a decreasing pass also warm-starts correctly.
        let mut solver = DantzigSolver::new(a.view(), b.view()).unwrap();
        solver.solve(0.01 * lmax).unwrap();
        let up = solver.solve(0.5 * lmax).unwrap();
        let cold = fit_dantzig(a.view(), b.view(), 0.5 * lmax).unwrap();
        assert!((up.l1_norm() - cold.l1_norm()).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn feasible_and_optimal_for_small_p(seed in 0u64..10_000, p in 1usize..=4, frac in 0.0f64..1.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_psd(&mut rng, p);
            let b = Array1::from_shape_fn(p, |_| rng.random_range(-2.0..2.0));
            let lambda = frac * linalg::max_abs(b.iter().cloned());
            let fit = fit_dantzig(a.view(), b.view(), lambda).unwrap();
            let r = a.dot(&fit.coefficients) - &b;
            prop_assert!(linalg::max_abs(r.iter().cloned()) <= lambda + 1e-6);
            let oracle = vertex_oracle(&a, &b, lambda);
            prop_assert!((fit.l1_norm() - oracle).abs() < 1e-5);
        }
    }
}
