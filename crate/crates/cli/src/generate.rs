use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::Serialize;
use sslinfer::sim::{generate_raw, truth, Model};

use crate::args::GenerateArgs;
use crate::manifest::{config_hash, Recorder, RunManifest};
use crate::{to_json, with_suffix, write_file, CliError, CliResult};

#[derive(Serialize)]
struct GenerateManifest<'a> {
    model: Model,
    truth: Vec<f64>,
    manifest: &'a RunManifest,
}

#[derive(Serialize)]
struct ResolvedConfig {
    command: &'static str,
    model: Model,
    n: usize,
    ratio: usize,
    p: usize,
    seed: u64,
}

pub fn outputs(prefix: &Path, ratio: usize) -> Vec<PathBuf> {
    let mut files = vec![with_suffix(prefix, "_labeled.csv")];
    if ratio > 0 {
        files.push(with_suffix(prefix, "_unlabeled.csv"));
    }
    files.push(with_suffix(prefix, ".manifest.json"));
    files
}

/// Columns `x1..xp`, plus `y` when `y` is given.
fn table(x: ArrayView2<'_, f64>, y: Option<&[f64]>) -> CliResult<Vec<u8>> {
    let err = |e: csv::Error| CliError::Config(e.to_string());
    let p = x.ncols();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    if y.is_some() {
        header.push("y".into());
    }
    w.write_record(&header).map_err(err)?;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(y) = y {
            fields.push(y[i].to_string());
        }
        w.write_record(&fields).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

pub fn run(args: &GenerateArgs, argv: Vec<String>, workers: usize) -> CliResult<()> {
    let mut rec = Recorder::new();
    let big_n = args.n * args.ratio;
    let raw = rec.stage("generate", || generate_raw(args.model, args.n, big_n, args.p, args.seed))?;
    let files = outputs(&args.out, args.ratio);
    let hash = config_hash(&ResolvedConfig {
        command: "generate",
        model: args.model,
        n: args.n,
        ratio: args.ratio,
        p: args.p,
        seed: args.seed,
    });
    let labeled = table(raw.labeled_x.view(), Some(&raw.labeled_y.to_vec()))?;
    let unlabeled = if args.ratio > 0 { Some(table(raw.unlabeled_x.view(), None)?) } else { None };
    let seeds = BTreeMap::from([("seed".to_string(), args.seed)]);
    let manifest = rec.finish(argv, hash, seeds, BTreeMap::new(), files.clone(), workers);
    write_file(&files[0], &labeled)?;
    if let Some(u) = unlabeled {
        write_file(&files[1], &u)?;
    }
    let meta = GenerateManifest { model: args.model, truth: truth(args.model, args.p).to_vec(), manifest: &manifest };
    write_file(files.last().expect("manifest path"), &to_json(&meta))?;
    println!("wrote {} labeled and {big_n} unlabeled rows with p = {}", args.n, args.p);
    Ok(())
}
