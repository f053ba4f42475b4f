//! Node-wise lasso estimate of the precision matrix `Ω = Σ⁻¹`.
//!
//! Row `k` of `Ω̂` comes from regressing column `k` on the remaining
//! columns: `Ω̂ₖₖ = 1/τ̂ₖ²` and `Ω̂ₖⱼ = −γ̂ₖⱼ/τ̂ₖ²`. The estimate is not
//! symmetric and is used as is.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{complement, fold_assignment, gram, take_rows};
use crate::error::{Error, Result};
use crate::solvers::tuning::refit_lasso;
use crate::solvers::{lambda_grid, tune_gram_lasso_cv, CvRule, GramFold, LassoOptions, LassoPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionSource {
    /// Labeled and unlabeled covariates together.
    Pooled,
    LabeledOnly,
    /// Provided by the caller, for instance an exact inverse.
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionEstimate {
    pub omega: Array2<f64>,
    /// `γ̂ₖ` with the `k`-th coordinate removed.
    pub gammas: Vec<Array1<f64>>,
    pub taus_sq: Array1<f64>,
    pub lambdas: Array1<f64>,
    pub source: PrecisionSource,
}

impl PrecisionEstimate {
    /// Wraps a caller-provided matrix.
    pub fn supplied(omega: Array2<f64>) -> Result<Self> {
        let p = omega.nrows();
        if omega.ncols() != p {
            return Err(Error::DimensionMismatch("precision matrix must be square".into()));
        }
        let taus_sq = Array1::from_shape_fn(p, |k| 1.0 / omega[[k, k]]);
        Ok(Self {
            omega,
            gammas: Vec::new(),
            taus_sq,
            lambdas: Array1::zeros(p),
            source: PrecisionSource::Supplied,
        })
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodewiseOptions {
    pub folds: usize,
    pub grid_len: usize,
    pub grid_ratio: f64,
    pub rule: CvRule,
}

impl Default for NodewiseOptions {
    fn default() -> Self {
        Self { folds: 5, grid_len: 100, grid_ratio: 1e-3, rule: CvRule::Minimum }
    }
}

/// Node-wise lasso with `λₖ` supplied or chosen per column by K-fold CV.
pub fn fit_nodewise(
    x: ArrayView2<'_, f64>,
    lambdas: Option<&[f64]>,
    seed: u64,
    source: PrecisionSource,
    opts: &NodewiseOptions,
) -> Result<PrecisionEstimate> {
    let order: Vec<usize> = (0..x.ncols()).collect();
    fit_in_order(x, lambdas, seed, source, opts, &order)
}

struct FoldGrams {
    train: Array2<f64>,
    test: Array2<f64>,
}

fn fit_in_order(
    x: ArrayView2<'_, f64>,
    lambdas: Option<&[f64]>,
    seed: u64,
    source: PrecisionSource,
    opts: &NodewiseOptions,
    order: &[usize],
) -> Result<PrecisionEstimate> {
    let (m, p) = x.dim();
    if m < 2 || p < 2 {
        return Err(Error::InsufficientData(format!(
            "node-wise lasso needs at least 2 rows and 2 columns, got {m}x{p}"
        )));
    }
    if !crate::linalg::all_finite(x.iter()) {
        return Err(Error::Domain("non-finite covariate".into()));
    }
    if let Some(l) = lambdas {
        if l.len() != p || l.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Config(format!("expected {p} nonnegative node-wise penalties")));
        }
    }
    let s = gram(x);
    let folds: Vec<FoldGrams> = if lambdas.is_none() {
        fold_assignment(m, opts.folds, seed)?
            .par_iter()
            .map(|held| FoldGrams {
                train: gram(take_rows(x, &complement(m, held)).view()),
                test: gram(take_rows(x, held).view()),
            })
            .collect()
    } else {
        Vec::new()
    };

    let column = |k: usize| -> Result<(Array1<f64>, f64, f64)> {
        let lasso_opts = LassoOptions { exclude: Some(k), ..Default::default() };
        let target = s.column(k);
        let mut path = LassoPath::new(s.view(), target, &lasso_opts);
        let fit = match lambdas {
            Some(l) => path.fit(l[k]),
            None => {
                let grid = lambda_grid(path.lambda_max(), opts.grid_len, opts.grid_ratio);
                let fold_views: Vec<GramFold<'_>> = folds
                    .iter()
                    .map(|f| GramFold {
                        train_gram: f.train.view(),
                        train_target: f.train.column(k),
                        test_gram: f.test.view(),
                        test_target: f.test.column(k),
                        test_yy: f.test[[k, k]],
                    })
                    .collect();
                let tuned = tune_gram_lasso_cv(&fold_views, &grid, opts.rule, &lasso_opts)?;
                refit_lasso(s.view(), target, &grid, tuned.chosen_index, &lasso_opts)
            }
        };
        let gamma = fit.coefficients;
        let tau_sq = s[[k, k]] - gamma.dot(&s.column(k));
        if tau_sq.is_nan() || tau_sq <= 1e-12 {
            return Err(Error::DegenerateColumn { k, tau_sq });
        }
        Ok((gamma, tau_sq, fit.lambda))
    };

    let results: Vec<(usize, Result<(Array1<f64>, f64, f64)>)> =
        order.par_iter().map(|&k| (k, column(k))).collect();

    let mut omega = Array2::zeros((p, p));
    let mut gammas = vec![Array1::zeros(p - 1); p];
    let mut taus_sq = Array1::zeros(p);
    let mut chosen = Array1::zeros(p);
    for (k, r) in results {
        let (gamma, tau_sq, lambda) = r?;
        for j in 0..p {
            omega[[k, j]] = if j == k { 1.0 / tau_sq } else { -gamma[j] / tau_sq };
        }
        gammas[k] = Array1::from_iter((0..p).filter(|&j| j != k).map(|j| gamma[j]));
        taus_sq[k] = tau_sq;
        chosen[k] = lambda;
    }
    Ok(PrecisionEstimate { omega, gammas, taus_sq, lambdas: chosen, source })
}

/// `‖I − Ω̂Σ̂‖max`.
pub fn inverse_defect(est: &PrecisionEstimate, sigma_hat: ArrayView2<'_, f64>) -> Result<f64> {
    if sigma_hat.dim() != est.omega.dim() {
        return Err(Error::DimensionMismatch("precision and covariance shapes differ".into()));
    }
    let prod = est.omega.dot(&sigma_hat);
    let p = prod.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let id = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((id - prod[[i, j]]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1_sample(m: usize, p: usize, rho: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((m, p));
        for i in 0..m {
            let mut prev: f64 = StandardNormal.sample(&mut rng);
            x[[i, 0]] = prev;
            for j in 1..p {
                let e: f64 = StandardNormal.sample(&mut rng);
                prev = rho * prev + (1.0 - rho * rho).sqrt() * e;
                x[[i, j]] = prev;
            }
        }
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        x - &mean
    }

    /// Tridiagonal inverse of the AR(1) correlation matrix.
    fn ar1_precision(p: usize, rho: f64) -> Array2<f64> {
        let c = 1.0 / (1.0 - rho * rho);
        Array2::from_shape_fn((p, p), |(i, j)| {
            if i == j {
                if i == 0 || i == p - 1 { c } else { c * (1.0 + rho * rho) }
            } else if i.abs_diff(j) == 1 {
                -rho * c
            } else {
                0.0
            }
        })
    }

    #[test]
    fn analytic_inverse_is_correct() {
        let p = 5;
        let rho: f64 = 0.3;
        let sigma = Array2::from_shape_fn((p, p), |(i, j)| rho.powi(i.abs_diff(j) as i32));
        let prod = ar1_precision(p, rho).dot(&sigma);
        for i in 0..p {
            for j in 0..p {
                assert!((prod[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uncorrelated_columns_give_diagonal() {
        let x = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let est = fit_nodewise(x.view(), Some(&[10.0, 10.0]), 0, PrecisionSource::Pooled, &Default::default()).unwrap();
        assert_eq!(est.omega, array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(est.taus_sq, array![1.0, 1.0]);
        let x = array![[2.0, 1.0], [2.0, -1.0], [-2.0, 1.0], [-2.0, -1.0]];
        let est = fit_nodewise(x.view(), None, 3, PrecisionSource::Pooled, &NodewiseOptions { folds: 2, ..Default::default() }).unwrap();
        assert_eq!(est.omega, array![[0.25, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn recovers_ar1_precision() {
        let x = ar1_sample(2000, 4, 0.3, 17);
        let est = fit_nodewise(x.view(), None, 5, PrecisionSource::Pooled, &Default::default()).unwrap();
        let truth = ar1_precision(4, 0.3);
        let err = crate::linalg::max_abs((&est.omega - &truth).iter().cloned());
        assert!(err < 0.15, "max error {err}");
        let sigma = gram(x.view());
        let defect = inverse_defect(&est, sigma.view()).unwrap();
        let bound = (0..4).map(|k| est.lambdas[k] / est.taus_sq[k]).fold(0.0, f64::max);
        assert!(defect <= bound + 1e-6, "{defect} > {bound}");
    }

    #[test]
    fn nodewise_kkt() {
        let x = ar1_sample(300, 6, 0.5, 2);
        let est = fit_nodewise(x.view(), None, 1, PrecisionSource::Pooled, &Default::default()).unwrap();
        let m = x.nrows() as f64;
        for k in 0..6 {
            let mut gamma = Array1::zeros(6);
            let mut c = 0;
            for j in 0..6 {
                if j != k {
                    gamma[j] = est.gammas[k][c];
                    c += 1;
                }
            }
            let r = &x.column(k) - &x.dot(&gamma);
            let g = x.t().dot(&r) / m;
            for j in 0..6 {
                if j != k {
                    assert!(g[j].abs() <= est.lambdas[k] + 1e-6);
                }
            }
        }
    }

    #[test]
    fn column_order_does_not_matter() {
        let x = ar1_sample(200, 5, 0.4, 3);
        let opts = NodewiseOptions::default();
        let a = fit_in_order(x.view(), None, 9, PrecisionSource::Pooled, &opts, &[0, 1, 2, 3, 4]).unwrap();
        let b = fit_in_order(x.view(), None, 9, PrecisionSource::Pooled, &opts, &[4, 2, 0, 3, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn defect_examples() {
        let sigma = array![[2.0, 0.5], [0.5, 1.0]];
        let (inv, _) = crate::linalg::inverse(sigma.view(), 1e12).unwrap();
        let exact = PrecisionEstimate::supplied(inv).unwrap();
        assert!(inverse_defect(&exact, sigma.view()).unwrap() < 1e-10);
        let zero = PrecisionEstimate::supplied(Array2::zeros((2, 2))).unwrap();
        assert_eq!(inverse_defect(&zero, sigma.view()).unwrap(), 1.0);
    }

    #[test]
    fn duplicated_column_is_degenerate() {
        let x = array![[1.0, 1.0, 0.5], [-1.0, -1.0, 0.2], [2.0, 2.0, -0.3], [-2.0, -2.0, -0.4]];
        let err = fit_nodewise(x.view(), Some(&[0.0, 0.0, 0.0]), 0, PrecisionSource::Pooled, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateColumn { .. }), "{err}");
    }
}
