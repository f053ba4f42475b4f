//! Debiased semi-supervised estimation for general M-estimators.
//!
//! Losses follow the estimating-equation sign convention: `θ*` solves
//! `E ∇_θ L(X, Y; θ) = 0` and `L` is concave near it, so the squared-loss
//! instance is `L = −½(y − xᵀθ)²` with gradient `x(y − xᵀθ)`.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::data::{gram, take_rows, SemiSupervisedDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::estimators::{
    b_matrix_from_designs, BFoldDesign, BMatrixEstimate, CvSettings, DebiasedEstimate, Method, SigmaSource,
    VarianceModel, XiEstimate, XiKind,
};
use crate::inference::GammaPsiEstimate;
use crate::linalg;
use crate::meanmodel::Surrogate;
use crate::precision::PrecisionEstimate;
use crate::solvers::{fit_dantzig, SparseLinearFit};

pub trait MLoss: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn value(&self, x: ArrayView1<'_, f64>, y: f64, theta: ArrayView1<'_, f64>) -> f64;

    fn gradient(&self, x: ArrayView1<'_, f64>, y: f64, theta: ArrayView1<'_, f64>) -> Array1<f64>;

    fn hessian(&self, x: ArrayView1<'_, f64>, y: f64, theta: ArrayView1<'_, f64>) -> Array2<f64>;

    /// `(A, b)` with mean gradient `b − Aθ`, for losses whose gradient is
    /// affine in `θ`.
    fn affine_system(&self, _x: ArrayView2<'_, f64>, _y: ArrayView1<'_, f64>) -> Option<(Array2<f64>, Array1<f64>)> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl MLoss for SquaredLoss {
    fn name(&self) -> &'static str {
        "squared"
    }

    fn value(&self, x: ArrayView1<'_, f64>, y: f64, theta: ArrayView1<'_, f64>) -> f64 {
        -0.5 * (y - x.dot(&theta)).powi(2)
    }

    fn gradient(&self, x: ArrayView1<'_, f64>, y: f64, theta: ArrayView1<'_, f64>) -> Array1<f64> {
        &x * (y - x.dot(&theta))
    }

    fn hessian(&self, x: ArrayView1<'_, f64>, _y: f64, _theta: ArrayView1<'_, f64>) -> Array2<f64> {
        let col = x.insert_axis(Axis(1));
        -col.dot(&col.t())
    }

    fn affine_system(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Option<(Array2<f64>, Array1<f64>)> {
        Some((gram(x), x.t().dot(&y) / x.nrows() as f64))
    }
}

/// Row-wise gradients, one row per observation.
pub fn gradient_matrix(
    loss: &dyn MLoss,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    theta: ArrayView1<'_, f64>,
) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for (i, mut row) in g.rows_mut().into_iter().enumerate() {
        row.assign(&loss.gradient(x.row(i), y[i], theta));
    }
    g
}

pub fn mean_gradient(loss: &dyn MLoss, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, theta: ArrayView1<'_, f64>) -> Array1<f64> {
    gradient_matrix(loss, x, y, theta).mean_axis(Axis(0)).expect("at least one row")
}

pub fn mean_hessian(loss: &dyn MLoss, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, theta: ArrayView1<'_, f64>) -> Array2<f64> {
    let p = x.ncols();
    let mut h = Array2::zeros((p, p));
    for (i, row) in x.rows().into_iter().enumerate() {
        h += &loss.hessian(row, y[i], theta);
    }
    h / x.nrows() as f64
}

const MAX_LINEARIZATIONS: usize = 50;
const LINEARIZATION_TOL: f64 = 1e-9;

/// `min ‖θ‖₁` subject to `‖mean ∇L(θ)‖∞ ≤ λ` on the labeled rows.
///
/// Affine gradients are solved directly. Otherwise the gradient is
/// linearized at the current iterate (starting from `start`) and the
/// resulting Dantzig problem re-solved until the iterates settle.
pub fn fit_m_dantzig(
    ds: &SemiSupervisedDataset,
    loss: &dyn MLoss,
    lambda: f64,
    start: ArrayView1<'_, f64>,
) -> Result<SparseLinearFit> {
    let x = ds.labeled_x();
    let y = ds.labeled_y();
    if start.len() != ds.p() {
        return Err(Error::DimensionMismatch(format!("start has length {}, expected {}", start.len(), ds.p())));
    }
    if let Some((a, b)) = loss.affine_system(x, y) {
        return fit_dantzig(a.view(), b.view(), lambda);
    }
    let mut theta = start.to_owned();
    let mut trail = Vec::new();
    for _ in 0..MAX_LINEARIZATIONS {
        let a = -mean_hessian(loss, x, y, theta.view());
        let b = mean_gradient(loss, x, y, theta.view()) + a.dot(&theta);
        let fit = fit_dantzig(a.view(), b.view(), lambda)?;
        let step = linalg::max_abs((&fit.coefficients - &theta).iter().cloned());
        trail.push(step);
        let scale = 1.0 + linalg::max_abs(fit.coefficients.iter().cloned());
        theta = fit.coefficients.clone();
        if step <= LINEARIZATION_TOL * scale {
            return Ok(fit);
        }
    }
    log::warn!("{} Dantzig linearization steps: {:?}", loss.name(), trail);
    Err(Error::NoConvergence {
        stage: format!("{} Dantzig linearization", loss.name()),
        iterations: MAX_LINEARIZATIONS,
        violation: trail.last().copied().unwrap_or(f64::NAN),
        best_iterate: theta.to_vec(),
    })
}

/// A cross-fitted vector-valued surrogate `m(x) ∈ ℝᵖ`, evaluated row-wise.
pub trait VectorSurrogate: Send + Sync + Debug {
    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// `x ∘ m(x)` for a scalar surrogate `m`, the squared-loss m-vector.
#[derive(Debug, Clone)]
pub struct CovariateProduct<S>(pub S);

impl<S: Surrogate> VectorSurrogate for CovariateProduct<S> {
    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let m = self.0.evaluate(x)?;
        Ok(&x * &m.insert_axis(Axis(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MSsslOptions {
    pub psi: f64,
    pub cv: CvSettings,
    /// Seed for the B̂ column cross-validation.
    pub b_seed: u64,
    pub max_condition: f64,
}

impl MSsslOptions {
    pub fn new(psi: f64, b_seed: u64) -> Self {
        Self { psi, cv: CvSettings::default(), b_seed, max_condition: 1e12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MSsslFit {
    pub estimate: DebiasedEstimate,
    pub b_matrix: BMatrixEstimate,
    /// Condition number of the negated mean Hessian.
    pub hessian_condition: f64,
}

/// One-step estimator
/// `θ̂ + (−Ĥ)⁻¹{mean ∇L(θ̂) − (ψ/2)B̂ᵀΣⱼ(labeled mean − pooled mean of m̂⁻ʲ)}`
/// with `Ĥ` the mean Hessian on every labeled row and B̂ from regressing
/// gradient components on centered m-vector components within each fold.
pub fn fit_m_sssl(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    loss: &dyn MLoss,
    m_vecs: [&dyn VectorSurrogate; 2],
    initial: &SparseLinearFit,
    opts: &MSsslOptions,
) -> Result<MSsslFit> {
    let p = ds.p();
    if initial.coefficients.len() != p {
        return Err(Error::DimensionMismatch("initial fit does not match p".into()));
    }
    if !opts.psi.is_finite() {
        return Err(Error::Config(format!("psi must be finite, got {}", opts.psi)));
    }
    let x = ds.labeled_x();
    let y = ds.labeled_y();
    let theta = initial.coefficients.view();
    let grads = gradient_matrix(loss, x, y, theta);
    let neg_hessian = -mean_hessian(loss, x, y, theta);
    let (omega, condition) = linalg::inverse(neg_hessian.view(), opts.max_condition)?;

    let mut labeled_m = Vec::with_capacity(2);
    let mut gap = Array1::zeros(p);
    for j in 0..2 {
        let lab = split.labeled_fold(j);
        let unl = split.unlabeled_fold(j);
        let ml = m_vecs[j].evaluate(take_rows(x, lab).view())?;
        if ml.dim() != (lab.len(), p) {
            return Err(Error::DimensionMismatch("m-vector must have p components per row".into()));
        }
        let lab_sum = ml.sum_axis(Axis(0));
        let pooled_sum = if unl.is_empty() {
            lab_sum.clone()
        } else {
            &lab_sum + &m_vecs[j].evaluate(take_rows(ds.unlabeled_x(), unl).view())?.sum_axis(Axis(0))
        };
        gap = gap + &lab_sum / lab.len() as f64 - &pooled_sum / (lab.len() + unl.len()) as f64;
        labeled_m.push(ml);
    }

    let designs = [0, 1].map(|j| {
        let ml = &labeled_m[j];
        let mu = ml.mean_axis(Axis(0)).expect("fold is nonempty");
        BFoldDesign { z: ml - &mu, responses: take_rows(grads.view(), split.labeled_fold(j)) }
    });
    let b_matrix = b_matrix_from_designs(&designs, &opts.cv, opts.b_seed)?;

    let n = ds.n() as f64;
    let mean_grad = grads.sum_axis(Axis(0)) / n;
    let correction = &mean_grad - &(b_matrix.b.t().dot(&gap) * (opts.psi / 2.0));
    let theta_hat = &initial.coefficients + &omega.dot(&correction);

    let m1 = grads.t().dot(&grads) / n;
    let m2_folds = [0, 1].map(|j| {
        let g = take_rows(grads.view(), split.labeled_fold(j));
        labeled_m[j].t().dot(&g) / g.nrows() as f64
    });
    let gamma = GammaPsiEstimate::assemble(m1, m2_folds, b_matrix.b.clone(), opts.psi, ds.n(), ds.N())?;

    let xi = &correction + &neg_hessian.dot(&initial.coefficients);
    let estimate = DebiasedEstimate {
        theta: theta_hat,
        method: Method::Sssl,
        psi: Some(opts.psi),
        initial: initial.clone(),
        omega_used: PrecisionEstimate::supplied(omega)?,
        xi_used: XiEstimate { xi, kind: XiKind::SPsi, psi: Some(opts.psi) },
        sigma_used: SigmaSource::Labeled,
        correction,
        variance: VarianceModel::Sssl(gamma),
        n: ds.n(),
        big_n: ds.N(),
    };
    Ok(MSsslFit { estimate, b_matrix, hessian_condition: condition })
}
