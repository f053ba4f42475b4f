//! Conditional-mean surrogates.
//!
//! The required trainer fits a sparse additive model: each coordinate is
//! expanded in a cubic B-spline basis (knots at training quantiles), the
//! centered blocks are orthonormalized and a group lasso path is scored
//! by BIC. Any other trainer can be plugged in through
//! [`SurrogateTrainer`].

use std::fmt::Debug;

use nalgebra::SymmetricEigen;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{take_entries, take_rows, SemiSupervisedDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::linalg;
use crate::solvers::{lambda_grid, tune_by_bic, tune_by_bic_weighted, BicResult, GroupProblem};

/// A fitted function `ℝᵖ → ℝ` evaluated row-wise.
pub trait Surrogate: Send + Sync + Debug {
    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>>;
}

/// Produces a surrogate from labeled rows. Implementations only ever see
/// the rows they are given.
pub trait SurrogateTrainer: Sync {
    fn train(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, seed: u64) -> Result<Box<dyn Surrogate>>;
}

/// Pair of cross-fitted surrogates: `fits[j]` was trained on the labeled
/// rows outside fold `j` and is evaluated on fold `j` only.
#[derive(Debug)]
pub struct CrossFitted {
    pub fits: [Box<dyn Surrogate>; 2],
}

impl CrossFitted {
    pub fn new(first: Box<dyn Surrogate>, second: Box<dyn Surrogate>) -> Self {
        Self { fits: [first, second] }
    }

    /// The same function in both folds, e.g. a known oracle.
    pub fn shared<S: Surrogate + Clone + 'static>(s: S) -> Self {
        Self::new(Box::new(s.clone()), Box::new(s))
    }
}

/// Trains one surrogate per fold on the complement labeled rows.
pub fn cross_fit(
    trainer: &dyn SurrogateTrainer,
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    seed: u64,
) -> Result<CrossFitted> {
    let fits: Vec<Result<Box<dyn Surrogate>>> = (0..2)
        .into_par_iter()
        .map(|j| {
            let rows = split.labeled_complement(j);
            let x = take_rows(ds.labeled_x(), rows);
            let y = take_entries(ds.labeled_y(), rows);
            trainer.train(x.view(), y.view(), crate::data::mix_seed(seed, j as u64))
        })
        .collect();
    let mut it = fits.into_iter();
    let first = it.next().expect("two folds")?;
    let second = it.next().expect("two folds")?;
    Ok(CrossFitted::new(first, second))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSurrogate(pub f64);

impl Surrogate for ConstantSurrogate {
    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(Array1::from_elem(x.nrows(), self.0))
    }
}

/// Wraps a closure evaluated on each row.
#[derive(Clone)]
pub struct FnSurrogate<F>(pub F);

impl<F> Debug for FnSurrogate<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnSurrogate")
    }
}

impl<F> Surrogate for FnSurrogate<F>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync,
{
    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(x.rows().into_iter().map(|r| (self.0)(r)).collect())
    }
}

/// Sparse additive spline fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditiveModelFit {
    /// Full knot vector per coordinate; empty for dropped coordinates.
    pub knots: Vec<Vec<f64>>,
    pub basis_df: usize,
    /// Coefficients on the raw (uncentered) spline basis, one block per
    /// coordinate.
    pub block_coefs: Vec<Array1<f64>>,
    pub intercept: f64,
    pub lambda: f64,
    /// Penalty chosen in the first stage of an adaptive fit.
    pub first_stage_lambda: Option<f64>,
    pub active_set: Vec<usize>,
    /// Training range used for clamping.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Coordinates that were constant in training and left out.
    pub dropped: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub bic: Vec<f64>,
    pub fitted: Array1<f64>,
}

impl AdditiveModelFit {
    pub fn p(&self) -> usize {
        self.knots.len()
    }

    /// Copy with every block scaled by `c` and the intercept unchanged.
    pub fn with_scaled_blocks(&self, c: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.block_coefs {
            *b *= c;
        }
        out
    }
}

impl Surrogate for AdditiveModelFit {
    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        evaluate(self, x)
    }
}

/// `Σⱼ Bⱼ(xⱼ)ᵀβⱼ + intercept`, clamping each coordinate to its training
/// range first.
pub fn evaluate(fit: &AdditiveModelFit, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.ncols() != fit.p() {
        return Err(Error::Schema(format!(
            "model has {} covariates but input has {}",
            fit.p(),
            x.ncols()
        )));
    }
    let mut out = Array1::from_elem(x.nrows(), fit.intercept);
    for &j in &fit.active_set {
        let coefs = &fit.block_coefs[j];
        let knots = &fit.knots[j];
        for (o, &v) in out.iter_mut().zip(x.column(j).iter()) {
            let row = basis_row(knots, v.clamp(fit.lower[j], fit.upper[j]));
            *o += row.iter().zip(coefs.iter()).map(|(b, c)| b * c).sum::<f64>();
        }
    }
    Ok(out)
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Knot vector of a cubic spline with `df` basis functions (intercept
/// column excluded): boundary knots repeated four times and `df − 3`
/// interior knots at equally spaced quantiles.
pub fn spline_knots(column: ArrayView1<'_, f64>, df: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let interior = df - 3;
    let mut knots = vec![lo; 4];
    for i in 1..=interior {
        knots.push(quantile_sorted(&sorted, i as f64 / (interior + 1) as f64));
    }
    knots.extend([hi; 4]);
    knots
}

/// Cubic B-spline basis at `x` with the first function dropped, so the
/// result has `knots.len() − 5` entries.
pub fn basis_row(knots: &[f64], x: f64) -> Vec<f64> {
    const DEG: usize = 3;
    let nb = knots.len() - DEG - 1;
    let span = if x >= knots[nb] {
        (DEG..nb).rev().find(|&i| knots[i] < knots[i + 1]).unwrap_or(nb - 1)
    } else {
        (DEG..nb)
            .rev()
            .find(|&i| knots[i] <= x && knots[i] < knots[i + 1])
            .unwrap_or(DEG)
    };
    let mut n = [0.0; DEG + 1];
    let mut left = [0.0; DEG + 1];
    let mut right = [0.0; DEG + 1];
    n[0] = 1.0;
    for j in 1..=DEG {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    let mut full = vec![0.0; nb];
    for (r, &v) in n.iter().enumerate() {
        full[span - DEG + r] = v;
    }
    full.remove(0);
    full
}

fn basis_matrix(knots: &[f64], column: ArrayView1<'_, f64>) -> Array2<f64> {
    let d = knots.len() - 5;
    let mut out = Array2::zeros((column.len(), d));
    for (i, &v) in column.iter().enumerate() {
        for (k, b) in basis_row(knots, v).into_iter().enumerate() {
            out[[i, k]] = b;
        }
    }
    out
}

struct Block {
    coord: usize,
    knots: Vec<f64>,
    means: Array1<f64>,
    transform: Array2<f64>,
    design: Array2<f64>,
}

fn build_block(j: usize, column: ArrayView1<'_, f64>, df: usize) -> Option<Block> {
    let knots = spline_knots(column, df);
    if knots[0] == knots[knots.len() - 1] {
        return None;
    }
    let raw = basis_matrix(&knots, column);
    let means = raw.mean_axis(Axis(0)).expect("rows");
    let centered = &raw - &means;
    let n = column.len() as f64;
    let g = centered.t().dot(&centered) / n;
    let eig = SymmetricEigen::new(linalg::to_nalgebra(g.view()));
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return None;
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > 1e-10 * top)
        .collect();
    let mut transform = Array2::zeros((raw.ncols(), keep.len()));
    for (c, &k) in keep.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[k].sqrt();
        for r in 0..raw.ncols() {
            transform[[r, c]] = eig.eigenvectors[(r, k)] * scale;
        }
    }
    let design = centered.dot(&transform);
    Some(Block { coord: j, knots, means, transform, design })
}

struct Prepared {
    blocks: Vec<Block>,
    dropped: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    y_mean: f64,
}

fn prepare(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, df: usize) -> Result<Prepared> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch("x rows and y length differ".into()));
    }
    if df < 3 {
        return Err(Error::Config(format!("cubic spline basis needs df >= 3, got {df}")));
    }
    if n <= df + 1 {
        return Err(Error::InsufficientData(format!(
            "additive fit with df={df} needs more than {} rows, got {n}",
            df + 1
        )));
    }
    if !linalg::all_finite(x.iter().chain(y.iter())) {
        return Err(Error::Domain("additive fit inputs must be finite".into()));
    }

    let built: Vec<Option<Block>> = (0..p).into_par_iter().map(|j| build_block(j, x.column(j), df)).collect();
    let mut dropped = Vec::new();
    let mut blocks = Vec::new();
    for (j, b) in built.into_iter().enumerate() {
        match b {
            Some(b) => blocks.push(b),
            None => {
                log::warn!("coordinate {} is constant in the training rows; dropped from the additive fit", j + 1);
                dropped.push(j);
            }
        }
    }
    let lower = (0..p).map(|j| x.column(j).iter().cloned().fold(f64::INFINITY, f64::min)).collect();
    let upper = (0..p).map(|j| x.column(j).iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    Ok(Prepared { blocks, dropped, lower, upper, y_mean: y.mean().expect("rows") })
}

/// Maps the BIC-chosen fit over `prep.blocks[subset]` back to the raw basis.
fn assemble(
    prep: &Prepared,
    subset: &[usize],
    bic: Option<&BicResult>,
    x: ArrayView2<'_, f64>,
    df: usize,
    first_stage_lambda: Option<f64>,
) -> Result<AdditiveModelFit> {
    let p = x.ncols();
    let mut knots = vec![Vec::new(); p];
    for b in &prep.blocks {
        knots[b.coord] = b.knots.clone();
    }
    let mut block_coefs = vec![Array1::zeros(df); p];
    let mut intercept = prep.y_mean;
    let mut active_set = Vec::new();
    if let Some(bic) = bic {
        let chosen = bic.chosen_fit();
        for (&i, (beta, zbar)) in subset.iter().zip(chosen.blocks.iter().zip(&bic.block_means)) {
            let b = &prep.blocks[i];
            if beta.iter().all(|&v| v == 0.0) {
                continue;
            }
            let raw = b.transform.dot(beta);
            intercept -= b.means.dot(&raw) + zbar.dot(beta);
            block_coefs[b.coord] = raw;
            active_set.push(b.coord);
        }
    }
    let mut fit = AdditiveModelFit {
        knots,
        basis_df: df,
        block_coefs,
        intercept,
        lambda: bic.map_or(f64::INFINITY, |b| b.chosen_lambda),
        first_stage_lambda,
        active_set,
        lower: prep.lower.clone(),
        upper: prep.upper.clone(),
        dropped: prep.dropped.clone(),
        lambda_grid: bic.map_or_else(Vec::new, |b| b.lambda_grid.clone()),
        bic: bic.map_or_else(Vec::new, |b| b.bic.clone()),
        fitted: Array1::zeros(0),
    };
    fit.fitted = evaluate(&fit, x)?;
    Ok(fit)
}

fn default_grid(views: &[ArrayView2<'_, f64>], y: ArrayView1<'_, f64>, y_mean: f64, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let yc = &y - y_mean;
    let mut problem = GroupProblem::from_blocks(views, yc.view())?;
    if let Some(w) = weights {
        problem = problem.with_weights(w.to_vec())?;
    }
    Ok(lambda_grid(problem.lambda_max(), 100, 1e-3))
}

/// Sparse additive regression with a BIC-selected group lasso penalty.
/// `grid` defaults to 100 log-spaced values below the smallest penalty
/// that zeroes every block.
pub fn fit_sparse_additive(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    df: usize,
    grid: Option<&[f64]>,
    _seed: u64,
) -> Result<AdditiveModelFit> {
    let prep = prepare(x, y, df)?;
    if prep.blocks.is_empty() {
        return assemble(&prep, &[], None, x, df, None);
    }
    let views: Vec<_> = prep.blocks.iter().map(|b| b.design.view()).collect();
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_grid(&views, y, prep.y_mean, None)?,
    };
    let bic = tune_by_bic(&views, y, &grid)?;
    let all: Vec<usize> = (0..prep.blocks.len()).collect();
    assemble(&prep, &all, Some(&bic), x, df, None)
}

/// Two-stage adaptive group lasso: the BIC-selected fit above picks the
/// candidate blocks, which are refitted with penalty weights `1/‖β̃ⱼ‖₂`
/// and a second BIC search. Blocks are orthonormal, so `‖β̃ⱼ‖₂` is the
/// empirical L2 norm of the first-stage component.
pub fn fit_adaptive_sparse_additive(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    df: usize,
    _seed: u64,
) -> Result<AdditiveModelFit> {
    let prep = prepare(x, y, df)?;
    if prep.blocks.is_empty() {
        return assemble(&prep, &[], None, x, df, None);
    }
    let views: Vec<_> = prep.blocks.iter().map(|b| b.design.view()).collect();
    let grid = default_grid(&views, y, prep.y_mean, None)?;
    let first = tune_by_bic(&views, y, &grid)?;
    let norms: Vec<f64> = first.chosen_fit().blocks.iter().map(|b| b.dot(b).sqrt()).collect();
    let subset: Vec<usize> = (0..norms.len()).filter(|&i| norms[i] > 0.0).collect();
    if subset.is_empty() {
        let all: Vec<usize> = (0..prep.blocks.len()).collect();
        return assemble(&prep, &all, Some(&first), x, df, None);
    }
    let kept: Vec<_> = subset.iter().map(|&i| views[i]).collect();
    let weights: Vec<f64> = subset.iter().map(|&i| 1.0 / norms[i]).collect();
    let grid = default_grid(&kept, y, prep.y_mean, Some(&weights))?;
    let second = tune_by_bic_weighted(&kept, y, &grid, Some(&weights))?;
    assemble(&prep, &subset, Some(&second), x, df, Some(first.chosen_lambda))
}

/// The spline trainer used by default for both `f̂` and `m̂`.
#[derive(Debug, Clone, Copy)]
pub struct SplineTrainer {
    pub df: usize,
    /// Refit the selected blocks with adaptive weights.
    pub adaptive: bool,
}

impl Default for SplineTrainer {
    fn default() -> Self {
        Self { df: 5, adaptive: true }
    }
}

impl SurrogateTrainer for SplineTrainer {
    fn train(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, seed: u64) -> Result<Box<dyn Surrogate>> {
        let fit = if self.adaptive {
            fit_adaptive_sparse_additive(x, y, self.df, seed)?
        } else {
            fit_sparse_additive(x, y, self.df, None, seed)?
        };
        Ok(Box::new(fit))
    }
}
