//! Debiased point estimators.
//!
//! * D-Lasso1 / D-Lasso2: CV lasso on the labeled rows plus a one-step
//!   correction with a labeled-only or pooled node-wise `Ω̂`.
//! * D-SSL: semi-supervised Dantzig fit `θ̂_SD` against a cross-fitted `ξ̂`,
//!   corrected with the pooled Gram `Σ̂_{n+N}`.
//! * S-SSL: supervised Dantzig fit `θ̂_D` corrected toward `ξ̂_{S,ψ}` with
//!   the labeled Gram `Σ̂ₙ`, where `ξ̂_{S,ψ}` subtracts `ψ/2·B̂ᵀ(·)` built
//!   from a cross-fitted surrogate `m̂`.
//!
//! [`Analysis`] runs the shared pipeline once and caches every stage, so
//! several methods fitted on one dataset reuse the same split, surrogates,
//! `Ω̂` and initial fits.

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    complement, fold_assignment, gram, make_split, mix_seed, take_entries, take_rows, ContrastVector,
    SemiSupervisedDataset, SplitPlan,
};
use crate::error::{Error, Result};
use crate::inference::{
    estimate_dssl_variance, estimate_gamma_psi, estimate_m1, make_interval, variance_dssl, variance_sandwich,
    variance_sssl, DsslVariance, GammaPsiEstimate, InferenceResult,
};
use crate::meanmodel::{cross_fit, CrossFitted, SplineTrainer, SurrogateTrainer};
use crate::precision::{fit_nodewise, NodewiseOptions, PrecisionEstimate, PrecisionSource};
use crate::solvers::tuning::refit_lasso;
use crate::solvers::{
    fit_dantzig, lambda_grid, tune_by_cv, tune_gram_dantzig_cv, tune_gram_lasso_cv, CvRule, FitKind, GramFold,
    LassoOptions, SparseLinearFit, TuningResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dlasso1,
    Dlasso2,
    Dssl,
    Sssl,
    /// Supervised Dantzig fit with a one-step correction, the `ψ = 0`
    /// member of the S-SSL family.
    Ddantzig,
}

impl Method {
    pub const PRIMARY: [Method; 4] = [Method::Dlasso1, Method::Dlasso2, Method::Dssl, Method::Sssl];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dlasso1 => "dlasso1",
            Method::Dlasso2 => "dlasso2",
            Method::Dssl => "dssl",
            Method::Sssl => "sssl",
            Method::Ddantzig => "ddantzig",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dlasso1" => Ok(Method::Dlasso1),
            "dlasso2" => Ok(Method::Dlasso2),
            "dssl" => Ok(Method::Dssl),
            "sssl" => Ok(Method::Sssl),
            "ddantzig" => Ok(Method::Ddantzig),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected dlasso1, dlasso2, dssl, sssl or ddantzig)"
            ))),
        }
    }
}

/// Cross-validation settings shared by the lasso and Dantzig tuning steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvSettings {
    pub folds: usize,
    pub grid_len: usize,
    pub grid_ratio: f64,
    pub rule: CvRule,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { folds: 5, grid_len: 100, grid_ratio: 1e-3, rule: CvRule::Minimum }
    }
}

/// Cross-fitted surrogate values: `labeled[j]` holds `m̂⁻ʲ(Xᵢ)` for
/// `i ∈ D_j*` and `unlabeled[j]` for `i ∈ U_j`, both in split order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossFitValues {
    pub labeled: [Array1<f64>; 2],
    pub unlabeled: [Array1<f64>; 2],
}

impl CrossFitValues {
    /// Evaluates `fits[j]` on fold `j` only.
    pub fn evaluate(ds: &SemiSupervisedDataset, split: &SplitPlan, fits: &CrossFitted) -> Result<Self> {
        let mut labeled = [Array1::zeros(0), Array1::zeros(0)];
        let mut unlabeled = [Array1::zeros(0), Array1::zeros(0)];
        for j in 0..2 {
            let xl = take_rows(ds.labeled_x(), split.labeled_fold(j));
            labeled[j] = fits.fits[j].evaluate(xl.view())?;
            let unl = split.unlabeled_fold(j);
            if !unl.is_empty() {
                let xu = take_rows(ds.unlabeled_x(), unl);
                unlabeled[j] = fits.fits[j].evaluate(xu.view())?;
            }
        }
        let out = Self { labeled, unlabeled };
        out.check(split)?;
        Ok(out)
    }

    fn check(&self, split: &SplitPlan) -> Result<()> {
        for j in 0..2 {
            if self.labeled[j].len() != split.labeled_fold(j).len()
                || self.unlabeled[j].len() != split.unlabeled_fold(j).len()
            {
                return Err(Error::DimensionMismatch("surrogate returned the wrong number of values".into()));
            }
            if !crate::linalg::all_finite(self.labeled[j].iter().chain(self.unlabeled[j].iter())) {
                return Err(Error::Domain(format!("surrogate for fold {} produced non-finite values", j + 1)));
            }
        }
        Ok(())
    }

    /// Labeled values indexed by original row.
    pub fn labeled_by_row(&self, split: &SplitPlan, n: usize) -> Array1<f64> {
        let mut out = Array1::zeros(n);
        for j in 0..2 {
            for (&i, &v) in split.labeled_fold(j).iter().zip(self.labeled[j].iter()) {
                out[i] = v;
            }
        }
        out
    }

    /// Unlabeled values indexed by original unlabeled row.
    pub fn unlabeled_by_row(&self, split: &SplitPlan, big_n: usize) -> Array1<f64> {
        let mut out = Array1::zeros(big_n);
        for j in 0..2 {
            for (&i, &v) in split.unlabeled_fold(j).iter().zip(self.unlabeled[j].iter()) {
                out[i] = v;
            }
        }
        out
    }
}

/// Per-fold sums `Σ_{D_j*} Xᵢm̂⁻ʲ(Xᵢ)` and `Σ_{D_j} Xᵢm̂⁻ʲ(Xᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMoments {
    pub labeled_sum: [Array1<f64>; 2],
    pub pooled_sum: [Array1<f64>; 2],
    pub n_j: [usize; 2],
    pub big_n_j: [usize; 2],
}

impl FoldMoments {
    pub fn compute(ds: &SemiSupervisedDataset, split: &SplitPlan, values: &CrossFitValues) -> Self {
        let mut labeled_sum = [Array1::zeros(ds.p()), Array1::zeros(ds.p())];
        let mut pooled_sum = labeled_sum.clone();
        let mut n_j = [0; 2];
        let mut big_n_j = [0; 2];
        for j in 0..2 {
            let lab = split.labeled_fold(j);
            let unl = split.unlabeled_fold(j);
            let xl = take_rows(ds.labeled_x(), lab);
            labeled_sum[j] = xl.t().dot(&values.labeled[j]);
            pooled_sum[j] = if unl.is_empty() {
                labeled_sum[j].clone()
            } else {
                let xu = take_rows(ds.unlabeled_x(), unl);
                &labeled_sum[j] + &xu.t().dot(&values.unlabeled[j])
            };
            n_j[j] = lab.len();
            big_n_j[j] = unl.len();
        }
        Self { labeled_sum, pooled_sum, n_j, big_n_j }
    }

    /// `Σⱼ {labeled fold mean − pooled fold mean}`.
    pub fn mean_gap(&self) -> Array1<f64> {
        let gap = |j: usize| {
            &self.labeled_sum[j] / self.n_j[j] as f64 - &self.pooled_sum[j] / (self.n_j[j] + self.big_n_j[j]) as f64
        };
        gap(0) + gap(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiKind {
    CrossfitF,
    SPsi,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiEstimate {
    pub xi: Array1<f64>,
    pub kind: XiKind,
    pub psi: Option<f64>,
}

impl XiEstimate {
    /// `XᵀY/n` over the labeled rows.
    pub fn plain(ds: &SemiSupervisedDataset) -> Self {
        Self { xi: ds.xi_plain(), kind: XiKind::Plain, psi: None }
    }
}

/// Cross-fitted `ξ̂ = XᵀY/n + ½Σⱼ{pooled fold mean − labeled fold mean}`
/// of `Xf̂⁻ʲ(X)`.
pub fn xi_crossfit(ds: &SemiSupervisedDataset, split: &SplitPlan, values: &CrossFitValues) -> XiEstimate {
    let moments = FoldMoments::compute(ds, split, values);
    let xi = ds.xi_plain() - &(moments.mean_gap() * 0.5);
    XiEstimate { xi, kind: XiKind::CrossfitF, psi: None }
}

/// `ξ̂_{S,ψ} = XᵀY/n − (ψ/2)·B̂ᵀΣⱼ{labeled fold mean − pooled fold mean}`.
pub fn compute_xi_s(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    b_hat: &BMatrixEstimate,
    psi: f64,
) -> Result<XiEstimate> {
    if !psi.is_finite() {
        return Err(Error::Config(format!("psi must be finite, got {psi}")));
    }
    if b_hat.b.nrows() != ds.p() {
        return Err(Error::DimensionMismatch("B̂ does not match p".into()));
    }
    let moments = FoldMoments::compute(ds, split, values);
    let shift = b_hat.b.t().dot(&moments.mean_gap()) * (psi / 2.0);
    Ok(XiEstimate { xi: ds.xi_plain() - &shift, kind: XiKind::SPsi, psi: Some(psi) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BMatrixEstimate {
    pub b: Array2<f64>,
    /// Average of the two per-fold column penalties, on the standardized scale.
    pub column_lambdas: Array1<f64>,
    pub fold_lambdas: [Array1<f64>; 2],
    pub per_fold_columns: [Array2<f64>; 2],
    pub rule: CvRule,
}

impl BMatrixEstimate {
    pub fn zeros(p: usize, rule: CvRule) -> Self {
        Self {
            b: Array2::zeros((p, p)),
            column_lambdas: Array1::zeros(p),
            fold_lambdas: [Array1::zeros(p), Array1::zeros(p)],
            per_fold_columns: [Array2::zeros((p, p)), Array2::zeros((p, p))],
            rule,
        }
    }
}

/// Working-regression design of fold `j`: covariates `Xᵢm̂⁻ʲ(Xᵢ) − μ̂ʲ`
/// and responses `Xᵢₖ(Yᵢ − Xᵢᵀθ̂_D)`, one row per `i ∈ D_j*`.
pub struct BFoldDesign {
    pub z: Array2<f64>,
    pub responses: Array2<f64>,
}

pub fn b_fold_design(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    theta_d: ArrayView1<'_, f64>,
    j: usize,
) -> BFoldDesign {
    let rows = split.labeled_fold(j);
    let x = take_rows(ds.labeled_x(), rows);
    let y = take_entries(ds.labeled_y(), rows);
    let r = &y - &x.dot(&theta_d);
    let w = &x * &values.labeled[j].view().insert_axis(Axis(1));
    let mu = w.mean_axis(Axis(0)).expect("fold is nonempty");
    let z = w - &mu;
    let responses = &x * &r.insert_axis(Axis(1));
    BFoldDesign { z, responses }
}

fn scaled_cross(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    a.t().dot(&b) / a.nrows() as f64
}

/// Root of the Gram diagonal, with zero columns left at scale one.
fn column_scales(g: &Array2<f64>) -> Array1<f64> {
    g.diag().mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
}

/// `D⁻¹·a·D⁻¹` and `D⁻¹·c` for `D = diag(d)`.
fn standardize(g: &Array2<f64>, c: &Array2<f64>, d: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
    let inv = d.mapv(|v| 1.0 / v);
    let col = inv.view().insert_axis(Axis(1));
    let row = inv.view().insert_axis(Axis(0));
    (g * &col * &row, c * &col)
}

/// Columns are fit on unit-scale covariates and mapped back, so `lambdas`
/// are on the standardized scale.
fn b_fold(design: &BFoldDesign, settings: &CvSettings, seed: u64, j: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let (nj, p) = design.z.dim();
    let g = gram(design.z.view());
    if crate::linalg::max_abs(g.iter().cloned()) == 0.0 {
        log::warn!("surrogate covariates in fold {} are identically zero; B̂ columns set to zero", j + 1);
        return Ok((Array2::zeros((p, p)), Array1::zeros(p)));
    }
    let scales = column_scales(&g);
    let (gs, cs) = standardize(&g, &scaled_cross(design.z.view(), design.responses.view()), &scales);
    struct Inner {
        train_g: Array2<f64>,
        train_c: Array2<f64>,
        test_g: Array2<f64>,
        test_c: Array2<f64>,
        test_yy: Array1<f64>,
    }
    let inner: Vec<Inner> = fold_assignment(nj, settings.folds, seed)?
        .iter()
        .map(|held| {
            let train = complement(nj, held);
            let zt = take_rows(design.z.view(), &train);
            let rt = take_rows(design.responses.view(), &train);
            let zh = take_rows(design.z.view(), held);
            let rh = take_rows(design.responses.view(), held);
            let test_yy = rh.map_axis(Axis(0), |col| col.dot(&col) / held.len() as f64);
            let train_g = gram(zt.view());
            let d = column_scales(&train_g);
            let (train_g, train_c) = standardize(&train_g, &scaled_cross(zt.view(), rt.view()), &d);
            let (test_g, test_c) = standardize(&gram(zh.view()), &scaled_cross(zh.view(), rh.view()), &d);
            Inner { train_g, train_c, test_g, test_c, test_yy }
        })
        .collect();
    let opts = LassoOptions::default();
    let columns: Vec<Result<(Array1<f64>, f64)>> = (0..p)
        .into_par_iter()
        .map(|k| {
            let target = cs.column(k);
            let lmax = crate::linalg::max_abs(target.iter().cloned());
            let grid = lambda_grid(lmax, settings.grid_len, settings.grid_ratio);
            let folds: Vec<GramFold<'_>> = inner
                .iter()
                .map(|f| GramFold {
                    train_gram: f.train_g.view(),
                    train_target: f.train_c.column(k),
                    test_gram: f.test_g.view(),
                    test_target: f.test_c.column(k),
                    test_yy: f.test_yy[k],
                })
                .collect();
            let tuned = tune_gram_lasso_cv(&folds, &grid, settings.rule, &opts)?;
            let fit = refit_lasso(gs.view(), target, &grid, tuned.chosen_index, &opts);
            Ok((&fit.coefficients / &scales, fit.lambda))
        })
        .collect();
    let mut b = Array2::zeros((p, p));
    let mut lambdas = Array1::zeros(p);
    for (k, col) in columns.into_iter().enumerate() {
        let (coef, lambda) = col?;
        b.column_mut(k).assign(&coef);
        lambdas[k] = lambda;
    }
    Ok((b, lambdas))
}

/// Column-wise lasso estimate of `B`, one per fold, averaged.
pub fn fit_b_matrix(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    theta_d: &SparseLinearFit,
    settings: &CvSettings,
    seed: u64,
) -> Result<BMatrixEstimate> {
    if theta_d.coefficients.len() != ds.p() {
        return Err(Error::DimensionMismatch("θ̂_D does not match p".into()));
    }
    let designs = [0, 1].map(|j| b_fold_design(ds, split, values, theta_d.coefficients.view(), j));
    b_matrix_from_designs(&designs, settings, seed)
}

/// Fits both folds' columns and averages them.
pub(crate) fn b_matrix_from_designs(
    designs: &[BFoldDesign; 2],
    settings: &CvSettings,
    seed: u64,
) -> Result<BMatrixEstimate> {
    let (b1, l1) = b_fold(&designs[0], settings, mix_seed(seed, 0), 0)?;
    let (b2, l2) = b_fold(&designs[1], settings, mix_seed(seed, 1), 1)?;
    Ok(BMatrixEstimate {
        b: (&b1 + &b2) / 2.0,
        column_lambdas: (&l1 + &l2) / 2.0,
        fold_lambdas: [l1, l2],
        per_fold_columns: [b1, b2],
        rule: settings.rule,
    })
}

/// Which sample covariance enters the one-step correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    Labeled,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceModel {
    /// `wᵀ·meat·w` with `w = Ω̂ᵀv`.
    Sandwich { meat: Array2<f64> },
    Dssl(DsslVariance),
    Sssl(GammaPsiEstimate),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DebiasedEstimate {
    pub theta: Array1<f64>,
    pub method: Method,
    pub psi: Option<f64>,
    pub initial: SparseLinearFit,
    pub omega_used: PrecisionEstimate,
    pub xi_used: XiEstimate,
    pub sigma_used: SigmaSource,
    /// `ξ − Σ̂·θ̂_initial`; `theta = initial + Ω̂·correction`.
    pub correction: Array1<f64>,
    pub variance: VarianceModel,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
}

impl DebiasedEstimate {
    pub fn contrast(&self, v: &ContrastVector) -> Result<f64> {
        contrast(self, v)
    }

    /// Plug-in variance of `√n·vᵀ(θ̂ − θ*)`.
    pub fn variance(&self, v: &ContrastVector) -> Result<f64> {
        let omega = self.omega_used.omega.view();
        match &self.variance {
            VarianceModel::Sandwich { meat } => variance_sandwich(v, omega, meat.view()),
            VarianceModel::Dssl(d) => variance_dssl(v, omega, d.sigma2, d.gamma.view(), self.n, self.big_n),
            VarianceModel::Sssl(g) => variance_sssl(v, omega, g),
        }
    }

    pub fn infer(&self, v: &ContrastVector, alpha: f64) -> Result<InferenceResult> {
        let estimate = self.contrast(v)?;
        let variance = self.variance(v)?;
        Ok(make_interval(estimate, variance, self.n, alpha)?.tagged(self.method, self.psi))
    }
}

/// `vᵀθ̂`.
pub fn contrast(est: &DebiasedEstimate, v: &ContrastVector) -> Result<f64> {
    v.dot(est.theta.view())
}

fn one_step(
    initial: &SparseLinearFit,
    omega: &PrecisionEstimate,
    xi: &XiEstimate,
    sigma: ArrayView2<'_, f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let p = initial.coefficients.len();
    if omega.p() != p || xi.xi.len() != p || sigma.nrows() != p {
        return Err(Error::DimensionMismatch("one-step inputs disagree on p".into()));
    }
    let correction = &xi.xi - &sigma.dot(&initial.coefficients);
    let theta = &initial.coefficients + &omega.omega.dot(&correction);
    Ok((theta, correction))
}

/// Supervised one-step Dantzig estimator `θ̂_D + Ω̂(XᵀY/n − Σ̂ₙθ̂_D)` with
/// a sandwich variance built from the `θ̂_D` residuals.
pub fn fit_dantzig_one_step(
    ds: &SemiSupervisedDataset,
    theta_d: &SparseLinearFit,
    omega: &PrecisionEstimate,
) -> Result<DebiasedEstimate> {
    let xi = XiEstimate::plain(ds);
    let (theta, correction) = one_step(theta_d, omega, &xi, ds.sigma_labeled().view())?;
    Ok(DebiasedEstimate {
        theta,
        method: Method::Ddantzig,
        psi: None,
        initial: theta_d.clone(),
        omega_used: omega.clone(),
        xi_used: xi,
        sigma_used: SigmaSource::Labeled,
        correction,
        variance: VarianceModel::Sandwich { meat: estimate_m1(ds, theta_d.coefficients.view())? },
        n: ds.n(),
        big_n: ds.N(),
    })
}

/// Debiased lasso from a lasso fit and a precision estimate; variant 1
/// expects a labeled-only `Ω̂`, variant 2 a pooled one.
pub fn debias_lasso(
    ds: &SemiSupervisedDataset,
    lasso: &SparseLinearFit,
    omega: &PrecisionEstimate,
    variant: u8,
) -> Result<DebiasedEstimate> {
    let method = match variant {
        1 => Method::Dlasso1,
        2 => Method::Dlasso2,
        v => return Err(Error::Config(format!("debiased lasso variant must be 1 or 2, got {v}"))),
    };
    let xi = XiEstimate::plain(ds);
    let (theta, correction) = one_step(lasso, omega, &xi, ds.sigma_labeled().view())?;
    Ok(DebiasedEstimate {
        theta,
        method,
        psi: None,
        initial: lasso.clone(),
        omega_used: omega.clone(),
        xi_used: xi,
        sigma_used: SigmaSource::Labeled,
        correction,
        variance: VarianceModel::Sandwich { meat: estimate_m1(ds, lasso.coefficients.view())? },
        n: ds.n(),
        big_n: ds.N(),
    })
}

/// `θ̂_SD`: Dantzig selector with constraint matrix `Σ̂_{n+N}` and the
/// cross-fitted target `ξ̂`.
pub fn fit_theta_sd(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    lambda_sd: f64,
) -> Result<SparseLinearFit> {
    let xi = xi_crossfit(ds, split, values);
    fit_dantzig(ds.sigma_pooled().view(), xi.xi.view(), lambda_sd)
}

/// D-SSL: `θ̂_SD + Ω̂(ξ̂ − Σ̂_{n+N}θ̂_SD)`.
pub fn fit_dssl(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    theta_sd: &SparseLinearFit,
    omega: &PrecisionEstimate,
) -> Result<DebiasedEstimate> {
    let xi = xi_crossfit(ds, split, values);
    let (theta, correction) = one_step(theta_sd, omega, &xi, ds.sigma_pooled().view())?;
    let parts = estimate_dssl_variance(ds, split, values, theta_sd, omega)?;
    Ok(DebiasedEstimate {
        theta,
        method: Method::Dssl,
        psi: None,
        initial: theta_sd.clone(),
        omega_used: omega.clone(),
        xi_used: xi,
        sigma_used: SigmaSource::Pooled,
        correction,
        variance: VarianceModel::Dssl(parts),
        n: ds.n(),
        big_n: ds.N(),
    })
}

/// S-SSL: `θ̂_D + Ω̂(ξ̂_{S,ψ} − Σ̂ₙθ̂_D)` with variance `vᵀΩ̂Γ̂_ψΩ̂ᵀv`.
pub fn fit_sssl(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    theta_d: &SparseLinearFit,
    omega: &PrecisionEstimate,
    b_hat: &BMatrixEstimate,
    psi: f64,
) -> Result<DebiasedEstimate> {
    let xi = compute_xi_s(ds, split, values, b_hat, psi)?;
    let (theta, correction) = one_step(theta_d, omega, &xi, ds.sigma_labeled().view())?;
    let gamma = estimate_gamma_psi(ds, split, values, b_hat, theta_d, psi)?;
    Ok(DebiasedEstimate {
        theta,
        method: Method::Sssl,
        psi: Some(psi),
        initial: theta_d.clone(),
        omega_used: omega.clone(),
        xi_used: xi,
        sigma_used: SigmaSource::Labeled,
        correction,
        variance: VarianceModel::Sssl(gamma),
        n: ds.n(),
        big_n: ds.N(),
    })
}

/// Fold statistics for tuning a Dantzig fit on the labeled rows. With
/// surrogate values the training target is the cross-fitted `ξ̂` of the
/// training rows and the constraint matrix includes every unlabeled row;
/// without, both reduce to the labeled training moments.
fn dantzig_cv(
    ds: &SemiSupervisedDataset,
    surrogate: Option<(&SplitPlan, &CrossFitValues)>,
    target: ArrayView1<'_, f64>,
    settings: &CvSettings,
    seed: u64,
) -> Result<TuningResult> {
    let (n, p) = (ds.n(), ds.p());
    let x = ds.labeled_x();
    let y = ds.labeled_y();
    let (f_lab, unlabeled) = match surrogate {
        Some((split, values)) => {
            let f = values.labeled_by_row(split, n);
            let extra = if ds.N() > 0 {
                let xu = ds.unlabeled_x();
                let fu = values.unlabeled_by_row(split, ds.N());
                Some((xu.t().dot(&xu), xu.t().dot(&fu), ds.N()))
            } else {
                None
            };
            (f, extra)
        }
        None => (Array1::zeros(n), None),
    };
    struct Fold {
        a: Array2<f64>,
        b: Array1<f64>,
        test_g: Array2<f64>,
        test_c: Array1<f64>,
        test_yy: f64,
    }
    let folds: Vec<Fold> = fold_assignment(n, settings.folds, seed)?
        .iter()
        .map(|held| {
            let train = complement(n, held);
            let xt = take_rows(x, &train);
            let yt = take_entries(y, &train);
            let ft = take_entries(f_lab.view(), &train);
            let nt = train.len();
            let mut s = xt.t().dot(&xt);
            let mut xf = xt.t().dot(&ft);
            let mut denom = nt;
            if let Some((su, xfu, big_n)) = &unlabeled {
                s += su;
                xf += xfu;
                denom += big_n;
            }
            let mut a = s / denom as f64;
            symmetrize(&mut a);
            let b = xt.t().dot(&(&yt - &ft)) / nt as f64 + &(xf / denom as f64);
            let xh = take_rows(x, held);
            let yh = take_entries(y, held);
            let nh = held.len() as f64;
            Fold { a, b, test_g: gram(xh.view()), test_c: xh.t().dot(&yh) / nh, test_yy: yh.dot(&yh) / nh }
        })
        .collect();
    debug_assert_eq!(folds.first().map(|f| f.a.nrows()), Some(p));
    let views: Vec<GramFold<'_>> = folds
        .iter()
        .map(|f| GramFold {
            train_gram: f.a.view(),
            train_target: f.b.view(),
            test_gram: f.test_g.view(),
            test_target: f.test_c.view(),
            test_yy: f.test_yy,
        })
        .collect();
    let grid = lambda_grid(crate::linalg::max_abs(target.iter().cloned()), settings.grid_len, settings.grid_ratio);
    tune_gram_dantzig_cv(&views, &grid, settings.rule)
}

fn symmetrize(a: &mut Array2<f64>) {
    let p = a.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = avg;
            a[[j, i]] = avg;
        }
    }
}

/// Pipeline settings. Every random choice derives from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisOptions {
    pub seed: u64,
    pub cv: CvSettings,
    /// CV rule for the `B̂` columns.
    pub b_rule: CvRule,
    pub nodewise: NodewiseOptions,
    pub spline_df: usize,
    /// Adaptive second stage for the spline surrogates.
    pub adaptive_spline: bool,
}

impl AnalysisOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            cv: CvSettings::default(),
            b_rule: CvRule::Minimum,
            nodewise: NodewiseOptions::default(),
            spline_df: 5,
            adaptive_spline: true,
        }
    }

    fn stage_seed(&self, stage: Stage) -> u64 {
        mix_seed(self.seed, stage as u64)
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Surrogate = 1,
    Nodewise = 2,
    Lasso = 3,
    Dantzig = 4,
    BMatrix = 5,
}

/// Cached pipeline over one dataset.
pub struct Analysis<'a> {
    ds: &'a SemiSupervisedDataset,
    opts: AnalysisOptions,
    split: SplitPlan,
    trainer: Box<dyn SurrogateTrainer + 'a>,
    surrogates: OnceCell<CrossFitted>,
    values: OnceCell<CrossFitValues>,
    omega_pooled: OnceCell<PrecisionEstimate>,
    omega_labeled: OnceCell<PrecisionEstimate>,
    lasso: OnceCell<(SparseLinearFit, TuningResult)>,
    theta_d: OnceCell<(SparseLinearFit, TuningResult)>,
    theta_sd: OnceCell<(SparseLinearFit, TuningResult)>,
    b_hat: OnceCell<BMatrixEstimate>,
}

fn cached<'c, T>(cell: &'c OnceCell<T>, init: impl FnOnce() -> Result<T>) -> Result<&'c T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = init()?;
    Ok(cell.get_or_init(|| v))
}

impl<'a> Analysis<'a> {
    pub fn new(ds: &'a SemiSupervisedDataset, opts: AnalysisOptions) -> Result<Self> {
        let split = make_split(ds.n(), ds.N(), opts.seed)?;
        Ok(Self {
            ds,
            opts,
            split,
            trainer: Box::new(SplineTrainer { df: opts.spline_df, adaptive: opts.adaptive_spline }),
            surrogates: OnceCell::new(),
            values: OnceCell::new(),
            omega_pooled: OnceCell::new(),
            omega_labeled: OnceCell::new(),
            lasso: OnceCell::new(),
            theta_d: OnceCell::new(),
            theta_sd: OnceCell::new(),
            b_hat: OnceCell::new(),
        })
    }

    /// Replaces the default spline trainer.
    pub fn with_trainer(mut self, trainer: Box<dyn SurrogateTrainer + 'a>) -> Self {
        self.trainer = trainer;
        self
    }

    /// Uses the given cross-fitted surrogates instead of training them.
    pub fn with_surrogates(self, fits: CrossFitted) -> Self {
        let _ = self.surrogates.set(fits);
        self
    }

    /// Uses the given `Ω̂` wherever the pooled node-wise estimate would be used.
    pub fn with_precision(self, omega: PrecisionEstimate) -> Self {
        let _ = self.omega_pooled.set(omega);
        self
    }

    pub fn dataset(&self) -> &SemiSupervisedDataset {
        self.ds
    }

    pub fn options(&self) -> &AnalysisOptions {
        &self.opts
    }

    pub fn split(&self) -> &SplitPlan {
        &self.split
    }

    pub fn surrogates(&self) -> Result<&CrossFitted> {
        cached(&self.surrogates, || {
            cross_fit(self.trainer.as_ref(), self.ds, &self.split, self.opts.stage_seed(Stage::Surrogate))
        })
    }

    pub fn surrogate_values(&self) -> Result<&CrossFitValues> {
        cached(&self.values, || CrossFitValues::evaluate(self.ds, &self.split, self.surrogates()?))
    }

    pub fn omega_pooled(&self) -> Result<&PrecisionEstimate> {
        cached(&self.omega_pooled, || {
            fit_nodewise(
                self.ds.pooled_x(),
                None,
                self.opts.stage_seed(Stage::Nodewise),
                PrecisionSource::Pooled,
                &self.opts.nodewise,
            )
        })
    }

    pub fn omega_labeled(&self) -> Result<&PrecisionEstimate> {
        cached(&self.omega_labeled, || {
            fit_nodewise(
                self.ds.labeled_x(),
                None,
                self.opts.stage_seed(Stage::Nodewise),
                PrecisionSource::LabeledOnly,
                &self.opts.nodewise,
            )
        })
    }

    /// CV lasso on the labeled rows.
    pub fn lasso(&self) -> Result<&(SparseLinearFit, TuningResult)> {
        cached(&self.lasso, || {
            let s = self.ds.sigma_labeled();
            let c = self.ds.xi_plain();
            let cv = &self.opts.cv;
            let grid = lambda_grid(crate::linalg::max_abs(c.iter().cloned()), cv.grid_len, cv.grid_ratio);
            let tuned = tune_by_cv(
                &FitKind::Lasso,
                self.ds.labeled_x(),
                self.ds.labeled_y(),
                cv.folds,
                &grid,
                cv.rule,
                self.opts.stage_seed(Stage::Lasso),
            )?;
            let fit = refit_lasso(s.view(), c.view(), &grid, tuned.chosen_index, &LassoOptions::default());
            Ok((fit, tuned))
        })
    }

    /// Supervised Dantzig fit `θ̂_D` with `λ_D` by CV.
    pub fn theta_d(&self) -> Result<&(SparseLinearFit, TuningResult)> {
        cached(&self.theta_d, || {
            let xi = self.ds.xi_plain();
            let tuned = dantzig_cv(self.ds, None, xi.view(), &self.opts.cv, self.opts.stage_seed(Stage::Dantzig))?;
            let fit = fit_dantzig(self.ds.sigma_labeled().view(), xi.view(), tuned.chosen_lambda)?;
            Ok((fit, tuned))
        })
    }

    /// Semi-supervised Dantzig fit `θ̂_SD` with `λ_SD` by CV.
    pub fn theta_sd(&self) -> Result<&(SparseLinearFit, TuningResult)> {
        cached(&self.theta_sd, || {
            let values = self.surrogate_values()?;
            let xi = xi_crossfit(self.ds, &self.split, values);
            let tuned = dantzig_cv(
                self.ds,
                Some((&self.split, values)),
                xi.xi.view(),
                &self.opts.cv,
                self.opts.stage_seed(Stage::Dantzig),
            )?;
            let fit = fit_theta_sd(self.ds, &self.split, values, tuned.chosen_lambda)?;
            Ok((fit, tuned))
        })
    }

    pub fn b_matrix(&self) -> Result<&BMatrixEstimate> {
        cached(&self.b_hat, || {
            let settings = CvSettings { rule: self.opts.b_rule, ..self.opts.cv };
            fit_b_matrix(
                self.ds,
                &self.split,
                self.surrogate_values()?,
                &self.theta_d()?.0,
                &settings,
                self.opts.stage_seed(Stage::BMatrix),
            )
        })
    }

    pub fn gamma_psi(&self, psi: f64) -> Result<GammaPsiEstimate> {
        estimate_gamma_psi(self.ds, &self.split, self.surrogate_values()?, self.b_matrix()?, &self.theta_d()?.0, psi)
    }

    pub fn dlasso(&self, variant: u8) -> Result<DebiasedEstimate> {
        let omega = match variant {
            1 => self.omega_labeled()?,
            2 => self.omega_pooled()?,
            v => return Err(Error::Config(format!("debiased lasso variant must be 1 or 2, got {v}"))),
        };
        debias_lasso(self.ds, &self.lasso()?.0, omega, variant)
    }

    pub fn dssl(&self) -> Result<DebiasedEstimate> {
        fit_dssl(self.ds, &self.split, self.surrogate_values()?, &self.theta_sd()?.0, self.omega_pooled()?)
    }

    pub fn sssl(&self, psi: f64) -> Result<DebiasedEstimate> {
        fit_sssl(
            self.ds,
            &self.split,
            self.surrogate_values()?,
            &self.theta_d()?.0,
            self.omega_pooled()?,
            self.b_matrix()?,
            psi,
        )
    }

    pub fn dantzig_one_step(&self) -> Result<DebiasedEstimate> {
        fit_dantzig_one_step(self.ds, &self.theta_d()?.0, self.omega_pooled()?)
    }

    /// Dispatches on `method`; `psi` is used by S-SSL only.
    pub fn fit(&self, method: Method, psi: f64) -> Result<DebiasedEstimate> {
        match method {
            Method::Dlasso1 => self.dlasso(1),
            Method::Dlasso2 => self.dlasso(2),
            Method::Dssl => self.dssl(),
            Method::Sssl => self.sssl(psi),
            Method::Ddantzig => self.dantzig_one_step(),
        }
    }
}

/// D-Lasso1 or D-Lasso2 from scratch.
pub fn fit_supervised_debiased(
    ds: &SemiSupervisedDataset,
    variant: u8,
    opts: AnalysisOptions,
) -> Result<DebiasedEstimate> {
    Analysis::new(ds, opts)?.dlasso(variant)
}
