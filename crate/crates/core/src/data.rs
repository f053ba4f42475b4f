//! Data model shared by every estimator: the centered semi-supervised
//! dataset, the two-fold cross-fitting split, contrast vectors and CSV
//! ingestion.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled and unlabeled covariates stacked into one centered matrix.
///
/// Rows `0..n` are labeled, rows `n..n+N` unlabeled. Centering uses the
/// pooled covariate sample and the labeled response mean.
#[derive(Debug, Clone)]
pub struct SemiSupervisedDataset {
    x: Array2<f64>,
    y: Array1<f64>,
    n: usize,
    column_means: Array1<f64>,
    y_mean: f64,
    names: Vec<String>,
}

impl SemiSupervisedDataset {
    /// Centers the raw inputs and builds the dataset.
    pub fn new(
        labeled_x: Array2<f64>,
        labeled_y: Array1<f64>,
        unlabeled_x: Option<Array2<f64>>,
    ) -> Result<Self> {
        let n = labeled_x.nrows();
        let p = labeled_x.ncols();
        if labeled_y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "labeled x has {} rows but y has {} entries",
                n,
                labeled_y.len()
            )));
        }
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 labeled rows, got {n}"
            )));
        }
        if p == 0 {
            return Err(Error::Schema("no covariate columns".into()));
        }
        let unlabeled = unlabeled_x.unwrap_or_else(|| Array2::zeros((0, p)));
        if unlabeled.ncols() != p {
            return Err(Error::Schema(format!(
                "labeled data has {} covariates but unlabeled data has {}",
                p,
                unlabeled.ncols()
            )));
        }
        if labeled_x.iter().chain(unlabeled.iter()).chain(labeled_y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite value in input data".into()));
        }

        let mut x = ndarray::concatenate(Axis(0), &[labeled_x.view(), unlabeled.view()])
            .expect("column counts checked above");
        let column_means = x.mean_axis(Axis(0)).expect("at least two rows");
        x -= &column_means;
        let y_mean = labeled_y.mean().expect("at least two rows");
        let y = labeled_y - y_mean;

        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Ok(Self { x, y, n, column_means, y_mean, names })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::Schema(format!(
                "expected {} covariate names, got {}",
                self.p(),
                names.len()
            )));
        }
        self.names = names;
        Ok(self)
    }

    /// Re-centers an existing dataset. Idempotent up to rounding.
    pub fn recentered(&self) -> Result<Self> {
        Self::new(
            self.labeled_x().to_owned(),
            self.labeled_y().to_owned(),
            Some(self.unlabeled_x().to_owned()),
        )
        .and_then(|d| d.with_names(self.names.clone()))
    }

    /// Labeled part only; the unlabeled rows are dropped and the data
    /// re-centered over the labeled covariates.
    pub fn labeled_only(&self) -> Result<Self> {
        Self::new(self.labeled_x().to_owned(), self.labeled_y().to_owned(), None)
            .and_then(|d| d.with_names(self.names.clone()))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of unlabeled rows.
    #[allow(non_snake_case)]
    pub fn N(&self) -> usize {
        self.x.nrows() - self.n
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn labeled_x(&self) -> ArrayView2<'_, f64> {
        self.x.slice(s![..self.n, ..])
    }

    pub fn labeled_y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn unlabeled_x(&self) -> ArrayView2<'_, f64> {
        self.x.slice(s![self.n.., ..])
    }

    /// All `n + N` covariate rows, labeled first.
    pub fn pooled_x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn column_means(&self) -> ArrayView1<'_, f64> {
        self.column_means.view()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `(1/n) Σ X_i X_iᵀ` over labeled rows.
    pub fn sigma_labeled(&self) -> Array2<f64> {
        gram(self.labeled_x())
    }

    /// `(1/(n+N)) Σ X_i X_iᵀ` over all rows.
    pub fn sigma_pooled(&self) -> Array2<f64> {
        gram(self.pooled_x())
    }

    /// `(1/n) Σ X_i Y_i`.
    pub fn xi_plain(&self) -> Array1<f64> {
        self.labeled_x().t().dot(&self.y) / self.n as f64
    }
}

/// `XᵀX / rows`, symmetrized exactly.
pub fn gram(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let m = x.nrows().max(1) as f64;
    let mut g = x.t().dot(&x) / m;
    let p = g.ncols();
    for i in 0..p {
        for j in 0..i {
            let v = g[[i, j]];
            g[[j, i]] = v;
        }
    }
    g
}

/// Gathers the given rows into a new matrix.
pub fn take_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

pub fn take_entries(y: ArrayView1<'_, f64>, rows: &[usize]) -> Array1<f64> {
    y.select(Axis(0), rows)
}

/// Two-fold partition of labeled and unlabeled rows used for cross-fitting.
///
/// Indices are zero-based and sorted; unlabeled indices are relative to the
/// unlabeled block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub d1_star: Vec<usize>,
    pub d2_star: Vec<usize>,
    pub u1: Vec<usize>,
    pub u2: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn labeled_fold(&self, j: usize) -> &[usize] {
        match j {
            0 => &self.d1_star,
            1 => &self.d2_star,
            _ => panic!("fold index {j} out of range"),
        }
    }

    pub fn unlabeled_fold(&self, j: usize) -> &[usize] {
        match j {
            0 => &self.u1,
            1 => &self.u2,
            _ => panic!("fold index {j} out of range"),
        }
    }

    /// Labeled rows outside fold `j`, i.e. the training rows for the
    /// fold-`j` nuisance fit.
    pub fn labeled_complement(&self, j: usize) -> &[usize] {
        self.labeled_fold(1 - j)
    }
}

/// Uniformly random two-fold split, `|D1*| = ⌈n/2⌉` and `|U1| = ⌈N/2⌉`.
#[allow(non_snake_case)]
pub fn make_split(n: usize, N: usize, seed: u64) -> Result<SplitPlan> {
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "cross-fitting needs at least 2 labeled rows, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5f3a_11ce));
    let (d1_star, d2_star) = random_halves(n, &mut rng);
    let (u1, u2) = random_halves(N, &mut rng);
    Ok(SplitPlan { d1_star, d2_star, u1, u2, seed })
}

fn random_halves(len: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    let first = len.div_ceil(2);
    let mut a = perm[..first].to_vec();
    let mut b = perm[first..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Assigns `len` rows to `folds` folds of near-equal size, deterministic in
/// `seed`. Returns the held-out index set of each fold, sorted.
pub fn fold_assignment(len: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if len < folds {
        return Err(Error::Config(format!(
            "{len} observations cannot fill {folds} folds with at least one each"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xc0ff_ee00));
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut rng);
    let mut out = vec![Vec::new(); folds];
    for (pos, idx) in perm.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Complement of a sorted index set within `0..len`.
pub fn complement(len: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; len];
    for &i in held_out {
        mask[i] = false;
    }
    (0..len).filter(|&i| mask[i]).collect()
}

/// SplitMix64 finalizer applied to a (seed, stream) pair. Used everywhere a
/// child seed is derived so results do not depend on evaluation order.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Nonzero vector `v` defining the target `vᵀθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastVector(Vec<f64>);

impl ContrastVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("contrast has non-finite entries".into()));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::Domain("contrast vector must be nonzero".into()));
        }
        Ok(Self(v))
    }

    /// Unit vector for the zero-based coordinate `j`.
    pub fn unit(p: usize, j: usize) -> Result<Self> {
        if j >= p {
            return Err(Error::Config(format!("component {} out of range 1..={p}", j + 1)));
        }
        let mut v = vec![0.0; p];
        v[j] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_array(&self) -> Array1<f64> {
        Array1::from(self.0.clone())
    }

    pub fn dot(&self, theta: ArrayView1<'_, f64>) -> Result<f64> {
        if theta.len() != self.0.len() {
            return Err(Error::DimensionMismatch(format!(
                "contrast has length {} but estimate has length {}",
                self.0.len(),
                theta.len()
            )));
        }
        Ok(self.0.iter().zip(theta.iter()).map(|(a, b)| a * b).sum())
    }

    /// `‖v‖₁ / ‖v‖₂`, reported as a diagnostic.
    pub fn l1_l2_ratio(&self) -> f64 {
        let l1: f64 = self.0.iter().map(|x| x.abs()).sum();
        let l2: f64 = self.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        l1 / l2
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|x| x * c).collect())
    }
}

struct CsvTable {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_numeric_csv(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut row = Vec::with_capacity(headers.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: headers.get(j).cloned().unwrap_or_else(|| format!("#{}", j + 1)),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: i + 1,
                    column: headers[j].clone(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(CsvTable { headers, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let display = path.display().to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: display, source },
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::Schema(format!(
            "{display}: row {} has {len} fields, expected {expected_len}",
            pos.map(|p| p.line()).unwrap_or(0)
        )),
        other => Error::Schema(format!("{display}: {other:?}")),
    }
}

/// Reads the labeled (and optional unlabeled) CSV files and returns the
/// centered dataset. The response column must appear in the labeled file
/// only; every other column is a covariate, in the same order in both files.
pub fn load_dataset(
    labeled_path: &Path,
    unlabeled_path: Option<&Path>,
    response_column: &str,
) -> Result<SemiSupervisedDataset> {
    let labeled = read_numeric_csv(labeled_path)?;
    let ycol = labeled
        .headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| {
            Error::Schema(format!(
                "response column '{response_column}' not found in {}",
                labeled_path.display()
            ))
        })?;
    let names: Vec<String> = labeled
        .headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != ycol)
        .map(|(_, h)| h.clone())
        .collect();
    let p = names.len();
    let n = labeled.rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "{} has {n} data rows, need at least 2",
            labeled_path.display()
        )));
    }
    let mut lx = Array2::zeros((n, p));
    let mut ly = Array1::zeros(n);
    for (i, row) in labeled.rows.iter().enumerate() {
        let mut c = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == ycol {
                ly[i] = v;
            } else {
                lx[[i, c]] = v;
                c += 1;
            }
        }
    }

    let ux = match unlabeled_path {
        None => None,
        Some(path) => {
            let table = read_numeric_csv(path)?;
            if table.headers.iter().any(|h| h == response_column) {
                return Err(Error::Schema(format!(
                    "unlabeled file {} must not contain the response column '{response_column}'",
                    path.display()
                )));
            }
            if table.headers.len() != p {
                return Err(Error::Schema(format!(
                    "unlabeled file {} has {} columns, expected {p}",
                    path.display(),
                    table.headers.len()
                )));
            }
            if table.headers != names {
                log::warn!(
                    "covariate names differ between {} and {}; matching by position",
                    labeled_path.display(),
                    path.display()
                );
            }
            let mut ux = Array2::zeros((table.rows.len(), p));
            for (i, row) in table.rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    ux[[i, j]] = v;
                }
            }
            Some(ux)
        }
    };

    SemiSupervisedDataset::new(lx, ly, ux)?.with_names(names)
}
