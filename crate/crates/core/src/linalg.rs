//! Small dense helpers bridging `ndarray` storage and `nalgebra`
//! factorizations.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// 2-norm condition number from the singular values; infinite when the
/// smallest singular value is zero.
pub fn condition_number(a: ArrayView2<'_, f64>) -> f64 {
    let sv = to_nalgebra(a).singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a square matrix, refusing matrices whose condition number
/// exceeds `max_condition`.
pub fn inverse(a: ArrayView2<'_, f64>, max_condition: f64) -> Result<(Array2<f64>, f64)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cannot invert a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let condition = condition_number(a);
    if !condition.is_finite() || condition > max_condition {
        return Err(Error::SingularHessian { condition });
    }
    let inv = to_nalgebra(a)
        .try_inverse()
        .ok_or(Error::SingularHessian { condition })?;
    Ok((from_nalgebra(&inv), condition))
}

/// Largest absolute entry.
pub fn max_abs(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `xᵀ A y`.
pub fn bilinear(x: ArrayView1<'_, f64>, a: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.dot(&a.dot(&y))
}

pub fn is_symmetric(a: ArrayView2<'_, f64>, tol: f64) -> bool {
    let p = a.nrows();
    if a.ncols() != p {
        return false;
    }
    for i in 0..p {
        for j in 0..i {
            let scale = 1.0f64.max(a[[i, j]].abs()).max(a[[j, i]].abs());
            if (a[[i, j]] - a[[j, i]]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// Indices of the nonzero entries.
pub fn support(v: ArrayView1<'_, f64>) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

pub fn l1(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Least-squares solution through the normal equations; test and oracle
/// use only.
pub fn solve(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let lu = to_nalgebra(a).lu();
    let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().cloned());
    lu.solve(&rhs).map(|x| Array1::from_iter(x.iter().cloned()))
}
