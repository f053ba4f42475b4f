use std::path::{Path, PathBuf};

use clap::Parser;

use crate::args::{Cli, Command, ReplayArgs};
use crate::manifest::{hash_file, read_manifest, RunManifest};
use crate::{estimate, generate, io_error, simulate, with_suffix, CliError, CliResult};

/// Files a command writes, in a fixed order.
pub fn outputs(command: &Command) -> Vec<PathBuf> {
    match command {
        Command::Estimate(a) => estimate::outputs(&a.out, a.format),
        Command::Simulate(a) => simulate::outputs(&a.out),
        Command::Holm(a) => a.out.iter().flat_map(|o| [o.clone(), with_suffix(o, ".manifest.json")]).collect(),
        Command::Generate(a) => generate::outputs(&a.out, a.ratio),
        Command::Replay(_) => Vec::new(),
    }
}

/// `r.json` becomes `r.replay.json`; a bare prefix gains `.replay`.
pub fn replay_path(out: &Path) -> PathBuf {
    match (out.file_stem(), out.extension()) {
        (Some(stem), Some(ext)) => {
            let mut name = stem.to_owned();
            name.push(".replay.");
            name.push(ext);
            out.with_file_name(name)
        }
        _ => with_suffix(out, ".replay"),
    }
}

/// `argv` with the value of `--out` replaced.
fn replace_out(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.display().to_string();
    let mut result = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            result.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if a.starts_with("--out=") {
            result.push(format!("--out={out}"));
            replaced = true;
        } else {
            result.push(a.clone());
        }
    }
    if !replaced {
        result.extend(["--out".to_string(), out]);
    }
    result
}

enum Content {
    Bytes(Vec<u8>),
    Json(serde_json::Value),
    Manifest,
}

fn load(path: &Path) -> CliResult<Content> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        if let Ok(mut value) = serde_json::from_slice::<serde_json::Value>(&bytes) {
            if let Some(obj) = value.as_object_mut() {
                if obj.remove("manifest").is_some() {
                    return Ok(Content::Json(value));
                }
            }
            if serde_json::from_value::<RunManifest>(value.clone()).is_ok() {
                return Ok(Content::Manifest);
            }
            return Ok(Content::Json(value));
        }
    }
    Ok(Content::Bytes(bytes))
}

/// Whether two output files agree once manifests are set aside.
pub fn same_output(a: &Path, b: &Path) -> CliResult<bool> {
    Ok(match (load(a)?, load(b)?) {
        (Content::Bytes(x), Content::Bytes(y)) => x == y,
        (Content::Json(x), Content::Json(y)) => x == y,
        (Content::Manifest, Content::Manifest) => true,
        _ => false,
    })
}

pub fn run(args: &ReplayArgs) -> CliResult<()> {
    let manifest = read_manifest(&args.manifest)?;
    if manifest.version != sslinfer::VERSION {
        log::warn!("manifest written by version {}, replaying with {}", manifest.version, sslinfer::VERSION);
    }
    let parsed = Cli::try_parse_from(std::iter::once("sslinfer".to_string()).chain(manifest.command.iter().cloned()))
        .map_err(|e| CliError::Config(format!("manifest command does not parse: {e}")))?;
    let mut command = parsed.command;
    if matches!(command, Command::Replay(_)) {
        return Err(CliError::Config("a replay manifest cannot be replayed".into()));
    }
    command.rebase(&manifest.cwd);
    for (path, hash) in &manifest.inputs {
        let resolved = manifest.cwd.join(path);
        if hash_file(&resolved)? != *hash {
            return Err(CliError::Config(format!("input {} changed since the recorded run", resolved.display())));
        }
    }
    let original = outputs(&command);
    let Some(old_out) = command.out().map(Path::to_path_buf) else {
        return Err(CliError::Config("the recorded command wrote no files".into()));
    };
    let new_out = args.out.clone().unwrap_or_else(|| replay_path(&old_out));
    command.set_out(new_out.clone());
    let fresh = outputs(&command);
    let argv = replace_out(&manifest.command, &new_out);
    crate::run(Cli { command }, argv)?;

    let mut differing = Vec::new();
    for (old, new) in original.iter().zip(&fresh) {
        if !same_output(old, new)? {
            differing.push(old.display().to_string());
        }
    }
    if !differing.is_empty() {
        return Err(CliError::Mismatch(differing.join(", ")));
    }
    println!("reproduced {} file(s)", original.len());
    Ok(())
}
