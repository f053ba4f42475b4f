//! Sparse regression kernels and their tuning.
//!
//! Every solver works on sufficient statistics (a Gram-type matrix and a
//! target vector) so that cross-validation folds, node-wise regressions
//! and path warm starts share one inner loop.

mod dantzig;
mod group;
mod lasso;
pub(crate) mod tuning;

use ndarray::Array1;
use serde::Serialize;

pub use dantzig::{dantzig_path, fit_dantzig, DantzigSolver};
pub use group::{fit_group_lasso, group_lasso_gram, GroupLassoFit, GroupProblem};
pub use lasso::{fit_lasso, lasso_gram, lasso_gram_traced, LassoOptions, LassoPath};
pub use tuning::{
    bic_value, lambda_grid, tune_by_bic, tune_by_bic_weighted, tune_by_cv, tune_gram_dantzig_cv, tune_gram_lasso_cv, BicResult, CvRule,
    FitKind, GramFold, TuningResult,
};

/// Coefficients of a sparse fit together with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseLinearFit {
    pub coefficients: Array1<f64>,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// KKT residual for lasso fits, constraint excess for Dantzig fits.
    pub dual_gap_or_violation: f64,
}

impl SparseLinearFit {
    pub(crate) fn new(
        coefficients: Array1<f64>,
        lambda: f64,
        iterations: usize,
        converged: bool,
        violation: f64,
    ) -> Self {
        let support = crate::linalg::support(coefficients.view());
        Self { coefficients, lambda, support, iterations, converged, dual_gap_or_violation: violation }
    }

    pub fn l1_norm(&self) -> f64 {
        crate::linalg::l1(self.coefficients.view())
    }
}
