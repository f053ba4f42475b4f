use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use super::group::{group_lasso_gram, GroupLassoFit, GroupProblem};
use super::lasso::{LassoOptions, LassoPath};
use super::{dantzig_path, SparseLinearFit};
use crate::data::{complement, fold_assignment, gram, take_entries, take_rows};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvRule {
    Minimum,
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitKind {
    Lasso,
    Dantzig,
    /// Group lasso over consecutive column blocks of the given sizes.
    Group { block_sizes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningResult {
    pub lambda_grid: Vec<f64>,
    /// Rows are grid points, columns are folds.
    pub cv_errors: Array2<f64>,
    pub mean_errors: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    pub rule: CvRule,
}

impl TuningResult {
    pub fn from_errors(lambda_grid: Vec<f64>, cv_errors: Array2<f64>, rule: CvRule) -> Self {
        let k = cv_errors.ncols() as f64;
        let mean_errors: Vec<f64> = cv_errors
            .axis_iter(Axis(0))
            .map(|row| row.sum() / k)
            .collect();
        let standard_errors: Vec<f64> = cv_errors
            .axis_iter(Axis(0))
            .zip(&mean_errors)
            .map(|(row, &m)| {
                if row.len() < 2 {
                    0.0
                } else {
                    let var = row.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (k - 1.0);
                    (var / k).sqrt()
                }
            })
            .collect();
        let mut best = 0;
        for (i, &m) in mean_errors.iter().enumerate() {
            if m < mean_errors[best] || mean_errors[best].is_nan() {
                best = i;
            }
        }
        let chosen_index = match rule {
            CvRule::Minimum => best,
            CvRule::OneStandardError => {
                let bound = mean_errors[best] + standard_errors[best];
                let mut pick = best;
                for (i, &m) in mean_errors.iter().enumerate() {
                    if m <= bound && lambda_grid[i] > lambda_grid[pick] {
                        pick = i;
                    }
                }
                pick
            }
        };
        Self {
            chosen_lambda: lambda_grid[chosen_index],
            lambda_grid,
            cv_errors,
            mean_errors,
            standard_errors,
            chosen_index,
            rule,
        }
    }
}

/// `count` log-spaced values from `lambda_max` down to `ratio·lambda_max`.
/// A zero `lambda_max` yields the single grid `[0]`.
pub fn lambda_grid(lambda_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    if lambda_max <= 0.0 || count <= 1 {
        return vec![lambda_max.max(0.0)];
    }
    let lo = (lambda_max * ratio).ln();
    let hi = lambda_max.ln();
    (0..count)
        .map(|i| {
            if i == 0 {
                lambda_max
            } else {
                (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("tuning grid is empty".into()));
    }
    if grid.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(Error::Config("tuning grid entries must be nonnegative".into()));
    }
    Ok(())
}

/// Fold statistics for a Gram-form lasso. Test quantities are normalized
/// by the held-out count so that the held-out mean squared error of `θ` is
/// `yy − 2θᵀc + θᵀGθ`.
pub struct GramFold<'a> {
    pub train_gram: ArrayView2<'a, f64>,
    pub train_target: ArrayView1<'a, f64>,
    pub test_gram: ArrayView2<'a, f64>,
    pub test_target: ArrayView1<'a, f64>,
    pub test_yy: f64,
}

impl GramFold<'_> {
    pub fn held_out_error(&self, theta: ArrayView1<'_, f64>) -> f64 {
        self.test_yy - 2.0 * theta.dot(&self.test_target) + linalg::bilinear(theta, self.test_gram, theta)
    }
}

/// Cross-validated lasso over precomputed fold statistics. Folds run in
/// order; callers parallelize across problems.
pub fn tune_gram_lasso_cv(
    folds: &[GramFold<'_>],
    grid: &[f64],
    rule: CvRule,
    opts: &LassoOptions,
) -> Result<TuningResult> {
    check_grid(grid)?;
    let mut errors = Array2::zeros((grid.len(), folds.len()));
    for (f, fold) in folds.iter().enumerate() {
        let mut path = LassoPath::new(fold.train_gram, fold.train_target, opts);
        for (i, &l) in grid.iter().enumerate() {
            let fit = path.fit(l);
            errors[[i, f]] = fold.held_out_error(fit.coefficients.view());
        }
    }
    Ok(TuningResult::from_errors(grid.to_vec(), errors, rule))
}

/// Cross-validated Dantzig selector over precomputed fold statistics:
/// each fold solves `‖Aθ − b‖∞ ≤ λ` with `A = train_gram`, `b =
/// train_target` along the grid and is scored by held-out error.
pub fn tune_gram_dantzig_cv(folds: &[GramFold<'_>], grid: &[f64], rule: CvRule) -> Result<TuningResult> {
    check_grid(grid)?;
    let columns: Vec<Result<Vec<f64>>> = folds
        .par_iter()
        .map(|fold| {
            let fits = dantzig_path(fold.train_gram, fold.train_target, grid)?;
            Ok(fits.iter().map(|f| fold.held_out_error(f.coefficients.view())).collect())
        })
        .collect();
    let mut errors = Array2::zeros((grid.len(), folds.len()));
    for (f, col) in columns.into_iter().enumerate() {
        errors.column_mut(f).assign(&Array1::from(col?));
    }
    Ok(TuningResult::from_errors(grid.to_vec(), errors, rule))
}

struct FoldData {
    train_gram: Array2<f64>,
    train_target: Array1<f64>,
    test_gram: Array2<f64>,
    test_target: Array1<f64>,
    test_yy: f64,
}

fn fold_data(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, held_out: &[usize]) -> FoldData {
    let train = complement(x.nrows(), held_out);
    let xtr = take_rows(x, &train);
    let ytr = take_entries(y, &train);
    let xte = take_rows(x, held_out);
    let yte = take_entries(y, held_out);
    let ntr = train.len() as f64;
    let nte = held_out.len() as f64;
    FoldData {
        train_gram: gram(xtr.view()),
        train_target: xtr.t().dot(&ytr) / ntr,
        test_gram: gram(xte.view()),
        test_target: xte.t().dot(&yte) / nte,
        test_yy: yte.dot(&yte) / nte,
    }
}

/// K-fold cross-validation of a sparse fit over `grid`, scored by held-out
/// mean squared prediction error. Fold membership depends only on `seed`.
pub fn tune_by_cv(
    kind: &FitKind,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    folds: usize,
    grid: &[f64],
    rule: CvRule,
    seed: u64,
) -> Result<TuningResult> {
    check_grid(grid)?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch("x rows and y length differ".into()));
    }
    let assignment = fold_assignment(x.nrows(), folds, seed)?;
    let data: Vec<FoldData> = assignment.par_iter().map(|h| fold_data(x, y, h)).collect();
    let columns: Vec<Result<Vec<f64>>> = data
        .par_iter()
        .map(|fd| {
            let score = |theta: ArrayView1<'_, f64>| {
                fd.test_yy - 2.0 * theta.dot(&fd.test_target)
                    + linalg::bilinear(theta, fd.test_gram.view(), theta)
            };
            match kind {
                FitKind::Lasso => {
                    let opts = LassoOptions::default();
                    let mut path = LassoPath::new(fd.train_gram.view(), fd.train_target.view(), &opts);
                    Ok(grid.iter().map(|&l| score(path.fit(l).coefficients.view())).collect())
                }
                FitKind::Dantzig => {
                    let fits = dantzig_path(fd.train_gram.view(), fd.train_target.view(), grid)?;
                    Ok(fits.iter().map(|f| score(f.coefficients.view())).collect())
                }
                FitKind::Group { block_sizes } => {
                    let problem = GroupProblem::new(
                        fd.train_gram.clone(),
                        fd.train_target.clone(),
                        ranges(block_sizes, x.ncols())?,
                    )?;
                    let mut warm: Option<Array1<f64>> = None;
                    let mut out = Vec::with_capacity(grid.len());
                    for &l in grid {
                        let fit = group_lasso_gram(&problem, l, warm.as_ref());
                        let beta = fit.stacked();
                        out.push(score(beta.view()));
                        warm = Some(beta);
                    }
                    Ok(out)
                }
            }
        })
        .collect();
    let mut errors = Array2::zeros((grid.len(), folds));
    for (f, col) in columns.into_iter().enumerate() {
        errors.column_mut(f).assign(&Array1::from(col?));
    }
    Ok(TuningResult::from_errors(grid.to_vec(), errors, rule))
}

fn ranges(sizes: &[usize], total: usize) -> Result<Vec<std::ops::Range<usize>>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &d in sizes {
        out.push(start..start + d);
        start += d;
    }
    if start != total {
        return Err(Error::Config(format!("block sizes sum to {start}, design has {total} columns")));
    }
    Ok(out)
}

/// `n·log(RSS/n) + log(n)·df`, infinite once `df ≥ n − 1`.
pub fn bic_value(n: usize, rss: f64, df: usize) -> f64 {
    if df + 1 >= n {
        return f64::INFINITY;
    }
    let nf = n as f64;
    nf * (rss / nf).ln() + nf.ln() * df as f64
}

#[derive(Debug, Clone)]
pub struct BicResult {
    pub lambda_grid: Vec<f64>,
    pub bic: Vec<f64>,
    pub rss: Vec<f64>,
    pub df: Vec<usize>,
    /// One fit per grid entry; `None` where the path was abandoned after
    /// saturation.
    pub fits: Vec<Option<GroupLassoFit>>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    /// Column means removed from each block and the response mean.
    pub block_means: Vec<Array1<f64>>,
    pub y_mean: f64,
}

impl BicResult {
    pub fn chosen_fit(&self) -> &GroupLassoFit {
        self.fits[self.chosen_index].as_ref().expect("chosen entry was fitted")
    }
}

/// Group lasso path over `grid` (warm-started in the given order) scored
/// by BIC, with the response and every block centered first. Once a fit
/// saturates (`df ≥ n − 1`) the remaining smaller λ values are skipped.
pub fn tune_by_bic(x_blocks: &[ArrayView2<'_, f64>], y: ArrayView1<'_, f64>, grid: &[f64]) -> Result<BicResult> {
    tune_by_bic_weighted(x_blocks, y, grid, None)
}

/// [`tune_by_bic`] with explicit per-block penalty weights.
pub fn tune_by_bic_weighted(
    x_blocks: &[ArrayView2<'_, f64>],
    y: ArrayView1<'_, f64>,
    grid: &[f64],
    weights: Option<&[f64]>,
) -> Result<BicResult> {
    if grid.is_empty() {
        return Err(Error::Config("BIC grid is empty".into()));
    }
    if grid.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(Error::Config("BIC grid entries must be nonnegative".into()));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InsufficientData("BIC needs at least two rows".into()));
    }
    let y_mean = y.mean().expect("nonempty");
    let yc = &y - y_mean;
    let mut centered = Vec::with_capacity(x_blocks.len());
    let mut block_means = Vec::with_capacity(x_blocks.len());
    for b in x_blocks {
        if b.nrows() != n {
            return Err(Error::DimensionMismatch("every block must have one row per response".into()));
        }
        let m = b.mean_axis(Axis(0)).expect("nonempty");
        centered.push(b - &m);
        block_means.push(m);
    }
    let views: Vec<_> = centered.iter().map(|b| b.view()).collect();
    let mut problem = GroupProblem::from_blocks(&views, yc.view())?;
    if let Some(w) = weights {
        problem = problem.with_weights(w.to_vec())?;
    }
    let design = ndarray::concatenate(Axis(1), &views).expect("row counts checked");

    let mut bic = vec![f64::INFINITY; grid.len()];
    let mut rss = vec![f64::NAN; grid.len()];
    let mut df = vec![0usize; grid.len()];
    let mut fits = vec![None; grid.len()];
    let mut warm: Option<Array1<f64>> = None;
    for (i, &l) in grid.iter().enumerate() {
        let fit = group_lasso_gram(&problem, l, warm.as_ref());
        let beta = fit.stacked();
        let resid = &yc - &design.dot(&beta);
        rss[i] = resid.dot(&resid);
        df[i] = fit.nonzeros();
        bic[i] = bic_value(n, rss[i], df[i]);
        let saturated = df[i] + 1 >= n;
        fits[i] = Some(fit);
        if saturated {
            break;
        }
        warm = Some(beta);
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if bic[i] < bic[best] {
            best = i;
        }
    }
    if fits[best].is_none() {
        best = 0;
    }
    Ok(BicResult {
        chosen_lambda: grid[best],
        lambda_grid: grid.to_vec(),
        bic,
        rss,
        df,
        fits,
        chosen_index: best,
        block_means,
        y_mean,
    })
}

/// Fits a single lasso at the CV-chosen λ on the full data.
pub(crate) fn refit_lasso(s: ArrayView2<'_, f64>, c: ArrayView1<'_, f64>, grid: &[f64], chosen: usize, opts: &LassoOptions) -> SparseLinearFit {
    let mut path = LassoPath::new(s, c, opts);
    let mut last = None;
    for &l in &grid[..=chosen] {
        last = Some(path.fit(l));
    }
    last.expect("grid is nonempty")
}
