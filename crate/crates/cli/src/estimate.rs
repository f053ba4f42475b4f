use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use sslinfer::data::{load_dataset, ContrastVector, SemiSupervisedDataset};
use sslinfer::estimators::{Analysis, AnalysisOptions, DebiasedEstimate, Method};
use sslinfer::inference::InferenceResult;
use sslinfer::precision::{inverse_defect, PrecisionSource};

use crate::args::{EstimateArgs, Format};
use crate::manifest::{config_hash, hash_file, Recorder, RunManifest};
use crate::{read_numbers, to_json, with_suffix, write_file, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub v_l1_l2_ratio: f64,
    /// `‖I − Ω̂Σ̂‖max` against the covariance the precision was fitted to.
    pub omega_inverse_defect: f64,
}

/// One estimate in the documented JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct EstimateRecord {
    pub method: Method,
    pub psi: Option<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub ci: [f64; 2],
    pub z_stat: f64,
    pub alpha: f64,
    pub n: usize,
    pub N: usize,
    pub p: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct WithManifest<'a> {
    #[serde(flatten)]
    record: &'a EstimateRecord,
    manifest: &'a RunManifest,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    command: &'static str,
    method: Method,
    psi: f64,
    response: &'a str,
    contrast: &'a [f64],
    alpha: f64,
    seed: u64,
    input_hashes: Vec<&'a str>,
}

const CSV_HEADER: [&str; 13] = [
    "method",
    "psi",
    "estimate",
    "std_error",
    "ci_low",
    "ci_high",
    "z_stat",
    "alpha",
    "n",
    "N",
    "p",
    "v_l1_l2_ratio",
    "omega_inverse_defect",
];

/// Files written for a given destination and format.
pub fn outputs(out: &std::path::Path, format: Format) -> Vec<PathBuf> {
    match format {
        Format::Json => vec![out.to_path_buf()],
        Format::Csv => vec![out.to_path_buf(), with_suffix(out, ".manifest.json")],
    }
}

fn resolve_contrast(args: &EstimateArgs, p: usize) -> CliResult<ContrastVector> {
    let bad = |msg: String| CliError::Config(msg);
    match (&args.contrast, args.component) {
        (Some(path), _) => {
            let v = read_numbers(path)?;
            if v.len() != p {
                return Err(bad(format!(
                    "contrast file {} has {} entries, expected p = {p}",
                    path.display(),
                    v.len()
                )));
            }
            ContrastVector::new(v).map_err(|e| bad(format!("contrast: {e}")))
        }
        (None, Some(j)) if (1..=p).contains(&j) => ContrastVector::unit(p, j - 1).map_err(|e| bad(e.to_string())),
        (None, Some(j)) => Err(bad(format!("--component {j} is outside 1..={p} (p = {p})"))),
        (None, None) => Err(bad("one of --contrast or --component is required".into())),
    }
}

/// Prerequisite stages of each method, in the order they are timed.
fn run_stages(rec: &mut Recorder, a: &Analysis<'_>, method: Method) -> CliResult<()> {
    match method {
        Method::Dlasso1 => {
            rec.stage("lasso", || a.lasso().map(drop))?;
            rec.stage("precision_labeled", || a.omega_labeled().map(drop))?;
        }
        Method::Dlasso2 => {
            rec.stage("lasso", || a.lasso().map(drop))?;
            rec.stage("precision_pooled", || a.omega_pooled().map(drop))?;
        }
        Method::Dssl => {
            rec.stage("surrogate", || a.surrogate_values().map(drop))?;
            rec.stage("dantzig_ssl", || a.theta_sd().map(drop))?;
            rec.stage("precision_pooled", || a.omega_pooled().map(drop))?;
        }
        Method::Sssl => {
            rec.stage("surrogate", || a.surrogate_values().map(drop))?;
            rec.stage("dantzig", || a.theta_d().map(drop))?;
            rec.stage("precision_pooled", || a.omega_pooled().map(drop))?;
            rec.stage("b_matrix", || a.b_matrix().map(drop))?;
        }
        Method::Ddantzig => {
            rec.stage("dantzig", || a.theta_d().map(drop))?;
            rec.stage("precision_pooled", || a.omega_pooled().map(drop))?;
        }
    }
    Ok(())
}

fn diagnostics(ds: &SemiSupervisedDataset, est: &DebiasedEstimate, v: &ContrastVector) -> sslinfer::Result<Diagnostics> {
    let sigma = match est.omega_used.source {
        PrecisionSource::LabeledOnly => ds.sigma_labeled(),
        PrecisionSource::Pooled | PrecisionSource::Supplied => ds.sigma_pooled(),
    };
    Ok(Diagnostics { v_l1_l2_ratio: v.l1_l2_ratio(), omega_inverse_defect: inverse_defect(&est.omega_used, sigma.view())? })
}

/// Loads the data and computes the record without writing anything.
pub fn compute(args: &EstimateArgs, rec: &mut Recorder) -> CliResult<(EstimateRecord, BTreeMap<String, String>)> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Config(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if !args.psi.is_finite() {
        return Err(CliError::Config("--psi must be finite".into()));
    }
    let mut inputs = BTreeMap::new();
    inputs.insert(args.labeled.display().to_string(), hash_file(&args.labeled)?);
    if let Some(u) = &args.unlabeled {
        inputs.insert(u.display().to_string(), hash_file(u)?);
    }
    if let Some(c) = &args.contrast {
        inputs.insert(c.display().to_string(), hash_file(c)?);
    }
    let ds = rec.stage("load", || load_dataset(&args.labeled, args.unlabeled.as_deref(), &args.response))?;
    let v = resolve_contrast(args, ds.p())?;
    let analysis = rec.stage("split", || Analysis::new(&ds, AnalysisOptions::new(args.seed)))?;
    run_stages(rec, &analysis, args.method)?;
    let est = rec.stage("debias", || analysis.fit(args.method, args.psi))?;
    let ci: InferenceResult = rec.stage("inference", || est.infer(&v, args.alpha))?;
    let diagnostics = rec.stage("diagnostics", || diagnostics(&ds, &est, &v))?;
    let record = EstimateRecord {
        method: args.method,
        psi: (args.method == Method::Sssl).then_some(args.psi),
        estimate: ci.estimate,
        std_error: ci.std_error,
        ci: [ci.ci_low, ci.ci_high],
        z_stat: ci.z_stat,
        alpha: ci.alpha,
        n: ds.n(),
        N: ds.N(),
        p: ds.p(),
        diagnostics,
    };
    Ok((record, inputs))
}

/// Input digests in argument order, so the hash ignores how paths are spelled.
fn input_hashes<'a>(args: &EstimateArgs, inputs: &'a BTreeMap<String, String>) -> Vec<&'a str> {
    [Some(&args.labeled), args.unlabeled.as_ref(), args.contrast.as_ref()]
        .into_iter()
        .flatten()
        .filter_map(|p| inputs.get(&p.display().to_string()).map(String::as_str))
        .collect()
}

fn csv_bytes(r: &EstimateRecord) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let psi = r.psi.map(|x| x.to_string()).unwrap_or_default();
    let row = [
        r.method.to_string(),
        psi,
        r.estimate.to_string(),
        r.std_error.to_string(),
        r.ci[0].to_string(),
        r.ci[1].to_string(),
        r.z_stat.to_string(),
        r.alpha.to_string(),
        r.n.to_string(),
        r.N.to_string(),
        r.p.to_string(),
        r.diagnostics.v_l1_l2_ratio.to_string(),
        r.diagnostics.omega_inverse_defect.to_string(),
    ];
    w.write_record(CSV_HEADER).and_then(|_| w.write_record(&row)).map_err(|e| CliError::Config(e.to_string()))?;
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

pub fn run(args: &EstimateArgs, argv: Vec<String>, workers: usize) -> CliResult<()> {
    let mut rec = Recorder::new();
    let (record, inputs) = compute(args, &mut rec)?;
    let contrast = resolve_contrast(args, record.p)?;
    let hash = config_hash(&ResolvedConfig {
        command: "estimate",
        method: args.method,
        psi: args.psi,
        response: &args.response,
        contrast: contrast.as_slice(),
        alpha: args.alpha,
        seed: args.seed,
        input_hashes: input_hashes(args, &inputs),
    });
    let seeds = BTreeMap::from([("seed".to_string(), args.seed)]);
    let files = outputs(&args.out, args.format);
    let manifest = rec.finish(argv, hash, seeds, inputs, files.clone(), workers);
    match args.format {
        Format::Json => write_file(&files[0], &to_json(&WithManifest { record: &record, manifest: &manifest }))?,
        Format::Csv => {
            write_file(&files[0], &csv_bytes(&record)?)?;
            write_file(&files[1], &to_json(&manifest))?;
        }
    }
    let label = match args.component {
        Some(j) if args.contrast.is_none() => format!("theta{j}"),
        _ => "contrast".to_string(),
    };
    println!(
        "{} {label}: estimate {:.6} {:.0}% CI [{:.6}, {:.6}] z {:.3}",
        record.method,
        record.estimate,
        100.0 * (1.0 - record.alpha),
        record.ci[0],
        record.ci[1],
        record.z_stat
    );
    Ok(())
}
