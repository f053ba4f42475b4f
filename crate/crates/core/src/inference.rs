//! Variance estimates, confidence intervals and test statistics.
//!
//! All variances are on the `√n` scale: the interval for `vᵀθ` is
//! `estimate ∓ z·√(variance/n)`. Quadratic forms with the (generally
//! asymmetric) node-wise `Ω̂` are evaluated as `wᵀMw` with `w = Ω̂ᵀv`,
//! matching the linear term `vᵀΩ̂(·)` in the one-step expansion.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{ContrastVector, SemiSupervisedDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::estimators::{BMatrixEstimate, CrossFitValues, Method};
use crate::linalg;
use crate::precision::PrecisionEstimate;
use crate::solvers::SparseLinearFit;

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("quantile level must lie in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub estimate: f64,
    pub variance: f64,
    /// `√(variance/n)`.
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub z_stat: f64,
    pub n: usize,
    pub method: Option<Method>,
    pub psi: Option<f64>,
}

impl InferenceResult {
    pub fn tagged(mut self, method: Method, psi: Option<f64>) -> Self {
        self.method = Some(method);
        self.psi = psi;
        self
    }

    pub fn half_length(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    /// Two-sided p-value of `H₀: vᵀθ = 0`.
    pub fn p_value(&self) -> f64 {
        2.0 * Normal::standard().cdf(-self.z_stat.abs())
    }
}

/// Normal interval `estimate ∓ z_{1−α/2}·√(variance/n)` and the statistic
/// `√n·estimate/√variance`.
pub fn make_interval(estimate: f64, variance: f64, n: usize, alpha: f64) -> Result<InferenceResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n == 0 {
        return Err(Error::InsufficientData("interval needs n >= 1".into()));
    }
    if !estimate.is_finite() {
        return Err(Error::Domain(format!("estimate is not finite: {estimate}")));
    }
    if !variance.is_finite() || variance < 0.0 {
        return Err(Error::DegenerateVariance { value: variance });
    }
    if variance == 0.0 {
        return Err(Error::DegenerateInterval(format!(
            "zero variance with estimate {estimate}; the test statistic is undefined"
        )));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let nf = n as f64;
    let std_error = (variance / nf).sqrt();
    let half = z * std_error;
    Ok(InferenceResult {
        estimate,
        variance,
        std_error,
        ci_low: estimate - half,
        ci_high: estimate + half,
        alpha,
        z_stat: nf.sqrt() * estimate / variance.sqrt(),
        n,
        method: None,
        psi: None,
    })
}

fn check_variance(value: f64) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::DegenerateVariance { value });
    }
    Ok(value)
}

fn contrast_weights(v: &ContrastVector, omega: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if v.len() != omega.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "contrast has length {} but p = {}",
            v.len(),
            omega.nrows()
        )));
    }
    Ok(omega.t().dot(&v.to_array()))
}

/// `wᵀ·meat·w` with `w = Ω̂ᵀv`.
pub fn variance_sandwich(v: &ContrastVector, omega: ArrayView2<'_, f64>, meat: ArrayView2<'_, f64>) -> Result<f64> {
    let w = contrast_weights(v, omega)?;
    check_variance(linalg::bilinear(w.view(), meat, w.view()))
}

/// Plug-in variance of the S-SSL contrast.
pub fn variance_sssl(v: &ContrastVector, omega: ArrayView2<'_, f64>, gamma: &GammaPsiEstimate) -> Result<f64> {
    variance_sandwich(v, omega, gamma.gamma_psi.view())
}

/// Plug-in variance of the D-SSL contrast, `σ̂²vᵀΩ̂v + n/(n+N)·vᵀΓ̂v`,
/// where `Γ̂` already carries `Ω̂` on both sides.
pub fn variance_dssl(
    v: &ContrastVector,
    omega: ArrayView2<'_, f64>,
    sigma2: f64,
    gamma_hat: ArrayView2<'_, f64>,
    n: usize,
    big_n: usize,
) -> Result<f64> {
    if v.len() != omega.nrows() || gamma_hat.dim() != omega.dim() {
        return Err(Error::DimensionMismatch("contrast, Ω̂ and Γ̂ shapes disagree".into()));
    }
    let a = v.to_array();
    let ratio = n as f64 / (n + big_n) as f64;
    check_variance(sigma2 * linalg::bilinear(a.view(), omega, a.view()) + ratio * linalg::bilinear(a.view(), gamma_hat, a.view()))
}

/// `Σᵢ wᵢxᵢxᵢᵀ / denom`.
pub(crate) fn weighted_gram(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>, denom: f64) -> Array2<f64> {
    let scaled = &x * &w.insert_axis(Axis(1));
    let mut g = scaled.t().dot(&x) / denom;
    let p = g.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (g[[i, j]] + g[[j, i]]);
            g[[i, j]] = avg;
            g[[j, i]] = avg;
        }
    }
    g
}

/// `N(2ψ − ψ²)/(n + N)`.
pub fn psi_factor(psi: f64, n: usize, big_n: usize) -> f64 {
    big_n as f64 * (2.0 * psi - psi * psi) / (n + big_n) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaPsiEstimate {
    pub m1_hat: Array2<f64>,
    pub m2_hat: Array2<f64>,
    pub m2_folds: [Array2<f64>; 2],
    pub b_hat: Array2<f64>,
    pub gamma_psi: Array2<f64>,
    pub psi: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
}

impl GammaPsiEstimate {
    /// Assembles `M̂₁ − N(2ψ−ψ²)/(n+N)·B̂ᵀM̂₂`.
    pub fn assemble(
        m1_hat: Array2<f64>,
        m2_folds: [Array2<f64>; 2],
        b_hat: Array2<f64>,
        psi: f64,
        n: usize,
        big_n: usize,
    ) -> Result<Self> {
        if !psi.is_finite() {
            return Err(Error::Config(format!("psi must be finite, got {psi}")));
        }
        let p = m1_hat.nrows();
        if b_hat.dim() != (p, p) || m2_folds.iter().any(|m| m.dim() != (p, p)) {
            return Err(Error::DimensionMismatch("Γ̂_ψ components must all be p×p".into()));
        }
        let m2_hat = (&m2_folds[0] + &m2_folds[1]) / 2.0;
        let c = psi_factor(psi, n, big_n);
        let gamma_psi = if c == 0.0 { m1_hat.clone() } else { &m1_hat - &(b_hat.t().dot(&m2_hat) * c) };
        Ok(Self { m1_hat, m2_hat, m2_folds, b_hat, gamma_psi, psi, n, big_n })
    }

    /// Same components at another ψ.
    pub fn at_psi(&self, psi: f64) -> Result<Self> {
        Self::assemble(self.m1_hat.clone(), self.m2_folds.clone(), self.b_hat.clone(), psi, self.n, self.big_n)
    }

    /// `wᵀB̂ᵀM̂₂w` with `w = Ω̂ᵀv`: the amount subtracted per unit of the ψ factor.
    pub fn reduction(&self, v: &ContrastVector, omega: ArrayView2<'_, f64>) -> Result<f64> {
        let w = contrast_weights(v, omega)?;
        let bm = self.b_hat.t().dot(&self.m2_hat);
        Ok(linalg::bilinear(w.view(), bm.view(), w.view()))
    }
}

/// `M̂₁ = (1/n)Σ(Yᵢ − Xᵢᵀθ̂)²XᵢXᵢᵀ` over the labeled rows.
pub fn estimate_m1(ds: &SemiSupervisedDataset, theta: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    if theta.len() != ds.p() {
        return Err(Error::DimensionMismatch("θ length differs from p".into()));
    }
    let x = ds.labeled_x();
    let r = &ds.labeled_y() - &x.dot(&theta);
    Ok(weighted_gram(x, (&r * &r).view(), ds.n() as f64))
}

/// `Γ̂_ψ` from the labeled residuals of `θ̂_D`, the cross-fitted surrogate
/// values and `B̂`.
pub fn estimate_gamma_psi(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    b_hat: &BMatrixEstimate,
    theta_d: &SparseLinearFit,
    psi: f64,
) -> Result<GammaPsiEstimate> {
    let m1 = estimate_m1(ds, theta_d.coefficients.view())?;
    let x = ds.labeled_x();
    let r = &ds.labeled_y() - &x.dot(&theta_d.coefficients);
    let fold = |j: usize| {
        let rows = split.labeled_fold(j);
        let xj = crate::data::take_rows(x, rows);
        let w = Array1::from_iter(rows.iter().zip(values.labeled[j].iter()).map(|(&i, &m)| r[i] * m));
        weighted_gram(xj.view(), w.view(), rows.len() as f64)
    };
    GammaPsiEstimate::assemble(m1, [fold(0), fold(1)], b_hat.b.clone(), psi, ds.n(), ds.N())
}

/// Cross-fitted ingredients of the D-SSL variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsslVariance {
    pub sigma2: f64,
    pub sigma2_folds: [f64; 2],
    /// Fold average of `mean η̂²XXᵀ` over `D_j`.
    pub kernel: Array2<f64>,
    /// `Ω̂·kernel·Ω̂ᵀ`.
    pub gamma: Array2<f64>,
}

/// `σ̂² = ½Σⱼ mean_{D_j*}(Y − f̂⁻ʲ)²` and `Γ̂ = ½Σⱼ mean_{D_j} η̂²Ω̂XXᵀΩ̂ᵀ`
/// with `η̂ = f̂⁻ʲ(X) − θ̂_SDᵀX`.
pub fn estimate_dssl_variance(
    ds: &SemiSupervisedDataset,
    split: &SplitPlan,
    values: &CrossFitValues,
    theta_sd: &SparseLinearFit,
    omega: &PrecisionEstimate,
) -> Result<DsslVariance> {
    let theta = &theta_sd.coefficients;
    if theta.len() != ds.p() || omega.p() != ds.p() {
        return Err(Error::DimensionMismatch("θ̂_SD or Ω̂ does not match p".into()));
    }
    let mut sigma2_folds = [0.0; 2];
    let mut kernels = Vec::with_capacity(2);
    for j in 0..2 {
        let lab = split.labeled_fold(j);
        let unl = split.unlabeled_fold(j);
        let xl = crate::data::take_rows(ds.labeled_x(), lab);
        let xu = crate::data::take_rows(ds.unlabeled_x(), unl);
        let yl = crate::data::take_entries(ds.labeled_y(), lab);
        let fl = &values.labeled[j];
        let fu = &values.unlabeled[j];
        let resid = &yl - fl;
        sigma2_folds[j] = resid.dot(&resid) / lab.len() as f64;
        let eta_l = fl - &xl.dot(theta);
        let eta_u = fu - &xu.dot(theta);
        let denom = (lab.len() + unl.len()) as f64;
        let mut k = weighted_gram(xl.view(), (&eta_l * &eta_l).view(), denom);
        if !unl.is_empty() {
            k += &weighted_gram(xu.view(), (&eta_u * &eta_u).view(), denom);
        }
        kernels.push(k);
    }
    let kernel = (&kernels[0] + &kernels[1]) / 2.0;
    let gamma = omega.omega.dot(&kernel).dot(&omega.omega.t());
    Ok(DsslVariance { sigma2: (sigma2_folds[0] + sigma2_folds[1]) / 2.0, sigma2_folds, kernel, gamma })
}
