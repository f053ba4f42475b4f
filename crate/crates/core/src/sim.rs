//! Monte-Carlo generators and the replication driver.
//!
//! Covariates are `U ~ N(0, Σ)` with `Σⱼₖ = 0.3^|j−k|` (drawn as a
//! stationary AR(1) sequence from ChaCha8 standard normals), `X₁ = |U₁|`
//! and `Xⱼ = Uⱼ` otherwise.
//!
//! * Model 1: `Y = 0.6(X₁+X₂)² + 0.4X₄³ − X₅ + 2X₆ + ε`
//! * Model 2: `Y = 0.5X₁² + 0.8X₃³ − (X₄−2)² + 2(X₅+1)² + 2X₆ + ε`

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, ContrastVector, SemiSupervisedDataset};
use crate::error::{Error, Result};
use crate::estimators::{Analysis, AnalysisOptions, Method};
use crate::inference::InferenceResult;

const RHO: f64 = 0.3;
const DATA_STREAM: u64 = 0xda7a;
const ANALYSIS_STREAM: u64 = 0xa11a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    One,
    Two,
}

impl Model {
    pub fn number(self) -> u8 {
        match self {
            Model::One => 1,
            Model::Two => 2,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Model::One),
            "2" => Ok(Model::Two),
            other => Err(Error::Config(format!("model must be 1 or 2, got '{other}'"))),
        }
    }
}

/// Least-squares projection parameter of each model.
pub fn truth(model: Model, p: usize) -> Array1<f64> {
    let head: [f64; 6] = match model {
        Model::One => [1.48, 1.04, 0.0, 1.2, -1.0, 2.0],
        Model::Two => [1.1, 0.0, 2.4, 4.0, 4.0, 2.0],
    };
    Array1::from_shape_fn(p, |j| head.get(j).copied().unwrap_or(0.0))
}

fn regression(model: Model, x: ndarray::ArrayView1<'_, f64>) -> f64 {
    match model {
        Model::One => 0.6 * (x[0] + x[1]).powi(2) + 0.4 * x[3].powi(3) - x[4] + 2.0 * x[5],
        Model::Two => {
            0.5 * x[0].powi(2) + 0.8 * x[2].powi(3) - (x[3] - 2.0).powi(2) + 2.0 * (x[4] + 1.0).powi(2) + 2.0 * x[5]
        }
    }
}

/// Uncentered draw: labeled covariates and responses plus unlabeled covariates.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub labeled_x: Array2<f64>,
    pub labeled_y: Array1<f64>,
    pub unlabeled_x: Array2<f64>,
}

fn check_dims(n: usize, p: usize) -> Result<()> {
    if p < 7 {
        return Err(Error::Config(format!("simulation models need p >= 7, got {p}")));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("need n >= 2, got {n}")));
    }
    Ok(())
}

#[allow(non_snake_case)]
pub fn generate_raw(model: Model, n: usize, N: usize, p: usize, seed: u64) -> Result<RawSample> {
    check_dims(n, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, DATA_STREAM));
    let innovation = (1.0 - RHO * RHO).sqrt();
    let mut x = Array2::zeros((n + N, p));
    for mut row in x.rows_mut() {
        let mut prev: f64 = StandardNormal.sample(&mut rng);
        row[0] = prev;
        for j in 1..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            prev = RHO * prev + innovation * z;
            row[j] = prev;
        }
        row[0] = row[0].abs();
    }
    let y = Array1::from_shape_fn(n, |i| {
        let eps: f64 = StandardNormal.sample(&mut rng);
        regression(model, x.row(i)) + eps
    });
    let labeled_x = x.slice(ndarray::s![..n, ..]).to_owned();
    let unlabeled_x = x.slice(ndarray::s![n.., ..]).to_owned();
    Ok(RawSample { labeled_x, labeled_y: y, unlabeled_x })
}

/// Draws `n` labeled and `N` unlabeled rows and returns the centered
/// dataset with the model's projection parameter.
#[allow(non_snake_case)]
pub fn generate(model: Model, n: usize, N: usize, p: usize, seed: u64) -> Result<(SemiSupervisedDataset, Array1<f64>)> {
    let raw = generate_raw(model, n, N, p, seed)?;
    let ds = SemiSupervisedDataset::new(raw.labeled_x, raw.labeled_y, Some(raw.unlabeled_x))?;
    Ok((ds, truth(model, p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTarget {
    pub label: String,
    pub contrast: ContrastVector,
}

impl SimTarget {
    /// `θⱼ` with a one-based label.
    pub fn component(p: usize, j: usize) -> Result<Self> {
        Ok(Self { label: format!("theta{}", j + 1), contrast: ContrastVector::unit(p, j)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: Model,
    pub n: usize,
    /// `N = ratio·n`.
    pub ratio: usize,
    pub p: usize,
    pub reps: usize,
    pub psi: f64,
    pub methods: Vec<Method>,
    pub targets: Vec<SimTarget>,
    pub seed: u64,
    pub alpha: f64,
}

impl SimConfig {
    #[allow(non_snake_case)]
    pub fn N(&self) -> usize {
        self.n * self.ratio
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.n, self.p)?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.methods.is_empty() || self.targets.is_empty() {
            return Err(Error::Config("need at least one method and one target".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| t.contrast.len() != self.p) {
            return Err(Error::Config(format!("target {} has length {}, expected p = {}", t.label, t.contrast.len(), self.p)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !self.psi.is_finite() {
            return Err(Error::Config("psi must be finite".into()));
        }
        Ok(())
    }

    pub fn replication_seed(&self, rep: usize) -> u64 {
        mix_seed(self.seed, rep as u64)
    }
}

/// One (replication, method, target) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub target: String,
    pub truth: f64,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub half_len: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub method: Method,
    pub target: String,
    pub bias: f64,
    /// Sample standard deviation; absent with a single successful replication.
    pub sd: Option<f64>,
    pub rmse: f64,
    pub half_len: f64,
    pub coverage: f64,
    pub reps_used: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub truth: Array1<f64>,
    pub rows: Vec<SimRow>,
    pub records: Vec<RepRecord>,
}

/// What a replication hands to the estimator callback.
pub struct ReplicationInput<'a> {
    pub rep: usize,
    pub seed: u64,
    pub dataset: &'a SemiSupervisedDataset,
    pub config: &'a SimConfig,
}

pub type MethodOutcome = (Method, Result<Vec<InferenceResult>>);

/// Runs the full pipeline for every configured method.
pub fn default_estimator(input: &ReplicationInput<'_>) -> Vec<MethodOutcome> {
    let cfg = input.config;
    let analysis = Analysis::new(input.dataset, AnalysisOptions::new(mix_seed(input.seed, ANALYSIS_STREAM)));
    cfg.methods
        .iter()
        .map(|&m| {
            let out = analysis.as_ref().map_err(clone_error).and_then(|a| {
                let est = a.fit(m, cfg.psi)?;
                cfg.targets.iter().map(|t| est.infer(&t.contrast, cfg.alpha)).collect()
            });
            (m, out)
        })
        .collect()
}

fn clone_error(e: &Error) -> Error {
    Error::Config(e.to_string())
}

pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    run_simulation_with(config, &default_estimator)
}

/// Replications run in parallel; each derives its seed from
/// `(config.seed, rep)` so results do not depend on scheduling.
pub fn run_simulation_with(
    config: &SimConfig,
    estimator: &(dyn Fn(&ReplicationInput<'_>) -> Vec<MethodOutcome> + Sync),
) -> Result<SimReport> {
    config.validate()?;
    let truth = truth(config.model, config.p);
    let truths: Vec<f64> = config
        .targets
        .iter()
        .map(|t| t.contrast.dot(truth.view()))
        .collect::<Result<_>>()?;
    let per_rep: Vec<Vec<RepRecord>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = config.replication_seed(rep);
            let outcomes = match generate(config.model, config.n, config.N(), config.p, seed) {
                Ok((ds, _)) => estimator(&ReplicationInput { rep, seed, dataset: &ds, config }),
                Err(e) => config.methods.iter().map(|&m| (m, Err(clone_error(&e)))).collect(),
            };
            let mut records = Vec::new();
            for (method, outcome) in outcomes {
                for (t, target) in config.targets.iter().enumerate() {
                    let mut rec = RepRecord {
                        rep,
                        seed,
                        method,
                        target: target.label.clone(),
                        truth: truths[t],
                        estimate: None,
                        std_error: None,
                        half_len: None,
                        covered: None,
                        error: None,
                    };
                    match &outcome {
                        Ok(results) => match results.get(t) {
                            Some(r) => {
                                rec.estimate = Some(r.estimate);
                                rec.std_error = Some(r.std_error);
                                rec.half_len = Some(r.half_length());
                                rec.covered = Some(r.covers(truths[t]));
                            }
                            None => rec.error = Some("missing_result".into()),
                        },
                        Err(e) => {
                            log::warn!("replication {rep}, {method}: {e}");
                            rec.error = Some(e.tag().to_string());
                        }
                    }
                    records.push(rec);
                }
            }
            records
        })
        .collect();
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    let rows = aggregate(config, &records);
    Ok(SimReport { config: config.clone(), truth, rows, records })
}

/// Table rows from raw records, in (method, target) configuration order.
pub fn aggregate(config: &SimConfig, records: &[RepRecord]) -> Vec<SimRow> {
    let mut sorted: Vec<&RepRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let mut rows = Vec::new();
    for &method in &config.methods {
        for target in &config.targets {
            let subset: Vec<&RepRecord> =
                sorted.iter().copied().filter(|r| r.method == method && r.target == target.label).collect();
            let ok: Vec<&RepRecord> = subset.iter().copied().filter(|r| r.estimate.is_some()).collect();
            let failed = subset.len() - ok.len();
            let used = ok.len();
            let (bias, sd, rmse, half_len, coverage) = if used == 0 {
                (f64::NAN, None, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let m = used as f64;
                let dev: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap() - r.truth).collect();
                let est: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap()).collect();
                let mean_est = est.iter().sum::<f64>() / m;
                let bias = dev.iter().sum::<f64>() / m;
                let sd = (used > 1)
                    .then(|| (est.iter().map(|e| (e - mean_est).powi(2)).sum::<f64>() / (m - 1.0)).sqrt());
                let rmse = (dev.iter().map(|d| d * d).sum::<f64>() / m).sqrt();
                let half_len = ok.iter().map(|r| r.half_len.unwrap()).sum::<f64>() / m;
                let coverage = ok.iter().filter(|r| r.covered == Some(true)).count() as f64 / m;
                (bias, sd, rmse, half_len, coverage)
            };
            rows.push(SimRow {
                method,
                target: target.label.clone(),
                bias,
                sd,
                rmse,
                half_len,
                coverage,
                reps_used: used,
                reps_failed: failed,
            });
        }
    }
    rows
}
