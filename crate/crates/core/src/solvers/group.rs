use std::ops::Range;

use nalgebra::SymmetricEigen;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::gram;
use crate::error::{Error, Result};
use crate::linalg;

/// Group lasso coefficients, one vector per block.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoFit {
    pub blocks: Vec<Array1<f64>>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub violation: f64,
}

impl GroupLassoFit {
    pub fn active(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.iter().any(|&v| v != 0.0))
            .map(|(j, _)| j)
            .collect()
    }

    /// Number of nonzero coefficients.
    pub fn nonzeros(&self) -> usize {
        self.blocks.iter().map(|b| b.iter().filter(|&&v| v != 0.0).count()).sum()
    }

    pub fn stacked(&self) -> Array1<f64> {
        Array1::from_iter(self.blocks.iter().flat_map(|b| b.iter().cloned()))
    }
}

/// Sufficient statistics of a group lasso problem
/// `½βᵀGβ − cᵀβ + λ Σⱼ wⱼ‖βⱼ‖₂`, with `wⱼ = √dⱼ` unless reweighted.
#[derive(Debug, Clone)]
pub struct GroupProblem {
    pub gram: Array2<f64>,
    pub target: Array1<f64>,
    pub blocks: Vec<Range<usize>>,
    lipschitz: Vec<f64>,
    orthonormal: Vec<bool>,
    weights: Vec<f64>,
}

impl GroupProblem {
    pub fn new(gram: Array2<f64>, target: Array1<f64>, blocks: Vec<Range<usize>>) -> Result<Self> {
        let dim = target.len();
        if gram.nrows() != dim || gram.ncols() != dim {
            return Err(Error::DimensionMismatch("group Gram and target disagree".into()));
        }
        let mut expected = 0;
        for b in &blocks {
            if b.start != expected || b.end <= b.start {
                return Err(Error::Config("blocks must tile the coefficient vector".into()));
            }
            expected = b.end;
        }
        if expected != dim {
            return Err(Error::Config("blocks must tile the coefficient vector".into()));
        }
        let mut lipschitz = Vec::with_capacity(blocks.len());
        let mut orthonormal = Vec::with_capacity(blocks.len());
        for b in &blocks {
            let sub = gram.slice(s![b.clone(), b.clone()]);
            let eig = SymmetricEigen::new(linalg::to_nalgebra(sub));
            lipschitz.push(eig.eigenvalues.iter().cloned().fold(0.0, f64::max));
            let mut ortho = true;
            for i in 0..sub.nrows() {
                for k in 0..sub.ncols() {
                    let want = if i == k { 1.0 } else { 0.0 };
                    if (sub[[i, k]] - want).abs() > 1e-10 {
                        ortho = false;
                    }
                }
            }
            orthonormal.push(ortho);
        }
        let weights = blocks.iter().map(|b| (b.len() as f64).sqrt()).collect();
        Ok(Self { gram, target, blocks, lipschitz, orthonormal, weights })
    }

    /// Builds the problem from design blocks: `G = XᵀX/n`, `c = Xᵀy/n`.
    pub fn from_blocks(x_blocks: &[ArrayView2<'_, f64>], y: ArrayView1<'_, f64>) -> Result<Self> {
        if x_blocks.is_empty() {
            return Err(Error::Config("no blocks supplied".into()));
        }
        let n = y.len();
        if x_blocks.iter().any(|b| b.nrows() != n) {
            return Err(Error::DimensionMismatch("every block must have one row per response".into()));
        }
        if !x_blocks.iter().all(|b| linalg::all_finite(b.iter())) || !linalg::all_finite(y.iter()) {
            return Err(Error::Domain("group lasso inputs must be finite".into()));
        }
        let design = ndarray::concatenate(Axis(1), x_blocks).expect("row counts checked");
        let mut ranges = Vec::with_capacity(x_blocks.len());
        let mut start = 0;
        for b in x_blocks {
            ranges.push(start..start + b.ncols());
            start += b.ncols();
        }
        let g = gram(design.view());
        let c = design.t().dot(&y) / n as f64;
        Self::new(g, c, ranges)
    }

    /// Replaces the per-block penalty weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} penalty weights for {} blocks",
                weights.len(),
                self.blocks.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::Domain("penalty weights must be finite and positive".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Smallest λ at which every block is zero.
    pub fn lambda_max(&self) -> f64 {
        (0..self.blocks.len())
            .map(|j| norm(self.target.slice(s![self.blocks[j].clone()])) / self.weight(j))
            .fold(0.0, f64::max)
    }
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Block coordinate descent from a warm start.
pub fn group_lasso_gram(problem: &GroupProblem, lambda: f64, warm: Option<&Array1<f64>>) -> GroupLassoFit {
    const MAX_SWEEPS: usize = 50_000;
    const CHANGE_TOL: f64 = 1e-11;
    const KKT_TOL: f64 = 1e-7;

    let dim = problem.target.len();
    let mut beta = warm.cloned().unwrap_or_else(|| Array1::zeros(dim));
    let mut grad = &problem.target - &problem.gram.dot(&beta);
    let mut sweeps = 0;
    let mut converged = false;
    let mut violation = f64::INFINITY;
    let nblocks = problem.blocks.len();

    let update = |j: usize, beta: &mut Array1<f64>, grad: &mut Array1<f64>| -> f64 {
        let range = problem.blocks[j].clone();
        let threshold = lambda * problem.weight(j);
        let lip = problem.lipschitz[j];
        if lip <= 0.0 {
            return 0.0;
        }
        let old = beta.slice(s![range.clone()]).to_owned();
        let new = if problem.orthonormal[j] {
            let z = &grad.slice(s![range.clone()]) + &old;
            group_shrink(z, threshold)
        } else {
            let mut cur = old.clone();
            let g_sub = problem.gram.slice(s![range.clone(), range.clone()]);
            let g0 = grad.slice(s![range.clone()]).to_owned();
            for _ in 0..1000 {
                let local_grad = &g0 - &g_sub.dot(&(&cur - &old));
                let z = &cur + &(local_grad / lip);
                let next = group_shrink(z, threshold / lip);
                let step = linalg::max_abs((&next - &cur).iter().cloned());
                cur = next;
                if step <= CHANGE_TOL {
                    break;
                }
            }
            cur
        };
        let delta = &new - &old;
        let change = linalg::max_abs(delta.iter().cloned());
        if change > 0.0 {
            beta.slice_mut(s![range.clone()]).assign(&new);
            let cols = problem.gram.slice(s![.., range]);
            *grad -= &cols.dot(&delta);
        }
        change * lip.sqrt()
    };

    let kkt = |beta: &Array1<f64>, grad: &Array1<f64>| -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..nblocks {
            if problem.lipschitz[j] <= 0.0 {
                continue;
            }
            let range = problem.blocks[j].clone();
            let b = beta.slice(s![range.clone()]);
            let g = grad.slice(s![range]);
            let threshold = lambda * problem.weight(j);
            let bn = norm(b);
            let v = if bn > 0.0 {
                norm((&g - &(&b * (threshold / bn))).view())
            } else {
                (norm(g) - threshold).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    };

    while sweeps < MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for j in 0..nblocks {
            change = change.max(update(j, &mut beta, &mut grad));
        }
        sweeps += 1;
        if change <= CHANGE_TOL {
            grad = &problem.target - &problem.gram.dot(&beta);
            violation = kkt(&beta, &grad);
            if violation <= KKT_TOL {
                converged = true;
                break;
            }
            continue;
        }
        let active: Vec<usize> = (0..nblocks)
            .filter(|&j| beta.slice(s![problem.blocks[j].clone()]).iter().any(|&v| v != 0.0))
            .collect();
        while sweeps < MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for &j in &active {
                change = change.max(update(j, &mut beta, &mut grad));
            }
            sweeps += 1;
            if change <= CHANGE_TOL {
                break;
            }
        }
    }
    if !converged {
        grad = &problem.target - &problem.gram.dot(&beta);
        violation = kkt(&beta, &grad);
    }
    let blocks = problem.blocks.iter().map(|r| beta.slice(s![r.clone()]).to_owned()).collect();
    GroupLassoFit { blocks, lambda, iterations: sweeps, converged, violation }
}

fn group_shrink(z: Array1<f64>, threshold: f64) -> Array1<f64> {
    let zn = norm(z.view());
    if zn <= threshold {
        Array1::zeros(z.len())
    } else {
        z * (1.0 - threshold / zn)
    }
}

/// Group lasso `(1/2n)‖y − Σⱼ Xⱼβⱼ‖² + λ Σⱼ √dⱼ ‖βⱼ‖₂`.
pub fn fit_group_lasso(
    x_blocks: &[ArrayView2<'_, f64>],
    y: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<GroupLassoFit> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let problem = GroupProblem::from_blocks(x_blocks, y)?;
    Ok(group_lasso_gram(&problem, lambda, None))
}
