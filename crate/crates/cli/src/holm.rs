use std::collections::BTreeMap;

use crate::args::HolmArgs;
use crate::manifest::{config_hash, hash_file, Recorder};
use crate::{read_numbers, to_json, with_suffix, write_file, CliError, CliResult};

/// Holm step-down adjustment, returned in input order.
pub fn holm(p: &[f64]) -> Result<Vec<f64>, String> {
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(format!("p-value #{} = {v} is outside [0, 1]", i + 1));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        adjusted[i] = running;
    }
    Ok(adjusted)
}

fn csv_bytes(p: &[f64], adjusted: &[f64]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(["index", "p_value", "adjusted"]).map_err(err)?;
    for (i, (a, b)) in p.iter().zip(adjusted).enumerate() {
        w.write_record([(i + 1).to_string(), a.to_string(), b.to_string()]).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

pub fn run(args: &HolmArgs, argv: Vec<String>, workers: usize) -> CliResult<()> {
    let rec = Recorder::new();
    let p = read_numbers(&args.input)?;
    let adjusted = holm(&p).map_err(|e| CliError::Config(format!("{}: {e}", args.input.display())))?;
    let bytes = csv_bytes(&p, &adjusted)?;
    match &args.out {
        None => print!("{}", String::from_utf8_lossy(&bytes)),
        Some(out) => {
            let inputs = BTreeMap::from([(args.input.display().to_string(), hash_file(&args.input)?)]);
            let files = vec![out.clone(), with_suffix(out, ".manifest.json")];
            let manifest = rec.finish(argv, config_hash(&("holm", &p)), BTreeMap::new(), inputs, files.clone(), workers);
            write_file(&files[0], &bytes)?;
            write_file(&files[1], &to_json(&manifest))?;
        }
    }
    Ok(())
}
