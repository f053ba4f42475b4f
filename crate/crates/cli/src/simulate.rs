use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sslinfer::data::ContrastVector;
use sslinfer::sim::{run_simulation, RepRecord, SimConfig, SimReport, SimRow, SimTarget};

use crate::args::SimulateArgs;
use crate::manifest::{config_hash, hash_file, Recorder, RunManifest};
use crate::{read_numbers, to_json, with_suffix, write_file, CliError, CliResult};

pub const CSV_HEADER: &str = "method,target,bias,sd,rmse,half_len,coverage,reps_used,reps_failed";

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a SimConfig,
    truth: Vec<f64>,
    rows: &'a [SimRow],
    records: &'a [RepRecord],
    manifest: &'a RunManifest,
}

pub fn outputs(prefix: &Path) -> Vec<PathBuf> {
    vec![with_suffix(prefix, ".csv"), with_suffix(prefix, ".json")]
}

pub fn config_from_args(args: &SimulateArgs) -> CliResult<SimConfig> {
    let mut targets = Vec::new();
    for &j in &args.components {
        if j == 0 || j > args.p {
            return Err(CliError::Config(format!("component {j} is outside 1..={}", args.p)));
        }
        targets.push(SimTarget::component(args.p, j - 1).map_err(|e| CliError::Config(e.to_string()))?);
    }
    if let Some(path) = &args.contrast {
        let v = read_numbers(path)?;
        if v.len() != args.p {
            return Err(CliError::Config(format!(
                "contrast file {} has {} entries, expected p = {}",
                path.display(),
                v.len(),
                args.p
            )));
        }
        let contrast = ContrastVector::new(v).map_err(|e| CliError::Config(format!("contrast: {e}")))?;
        targets.push(SimTarget { label: "contrast".into(), contrast });
    }
    let config = SimConfig {
        model: args.model,
        n: args.n,
        ratio: args.ratio,
        p: args.p,
        reps: args.reps,
        psi: args.psi,
        methods: args.methods.clone(),
        targets,
        seed: args.seed,
        alpha: args.alpha,
    };
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

pub fn csv_bytes(rows: &[SimRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).map_err(|e| CliError::Config(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

fn print_table(report: &SimReport) {
    println!("{:<9} {:<9} {:>9} {:>9} {:>9} {:>9} {:>8} {:>5}", "method", "target", "bias", "sd", "rmse", "half_len", "coverage", "used");
    for r in &report.rows {
        let sd = r.sd.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<9} {:<9} {:>9.4} {:>9} {:>9.4} {:>9.4} {:>8.3} {:>5}",
            r.method.as_str(),
            r.target,
            r.bias,
            sd,
            r.rmse,
            r.half_len,
            r.coverage,
            r.reps_used
        );
    }
}

pub fn run(args: &SimulateArgs, argv: Vec<String>, workers: usize) -> CliResult<()> {
    let mut rec = Recorder::new();
    let config = config_from_args(args)?;
    let mut inputs = BTreeMap::new();
    if let Some(c) = &args.contrast {
        inputs.insert(c.display().to_string(), hash_file(c)?);
    }
    let report = rec.stage("simulate", || run_simulation(&config))?;
    let seeds: BTreeMap<String, u64> = std::iter::once(("seed".to_string(), config.seed))
        .chain((0..config.reps).map(|r| (format!("rep{r}"), config.replication_seed(r))))
        .collect();
    let files = outputs(&args.out);
    let manifest = rec.finish(argv, config_hash(&config), seeds, inputs, files.clone(), workers);
    write_file(&files[0], &csv_bytes(&report.rows)?)?;
    let json = JsonReport {
        config: &report.config,
        truth: report.truth.to_vec(),
        rows: &report.rows,
        records: &report.records,
        manifest: &manifest,
    };
    write_file(&files[1], &to_json(&json))?;
    print_table(&report);
    Ok(())
}
