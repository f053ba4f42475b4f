//! Run manifests: enough to rerun a command and check its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{io_error, CliError, CliResult};

/// Random-number contract written into every manifest.
pub const GENERATOR: &str =
    "ChaCha8Rng (rand_chacha) seeded per stage by a splitmix64 mix of (seed, stream); normals by rand_distr StandardNormal (ziggurat)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Arguments after the program name.
    pub command: Vec<String>,
    pub cwd: PathBuf,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub generator: String,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub workers: usize,
    pub started_unix: f64,
    pub wall_time_secs: f64,
    pub stage_timings: Vec<StageTiming>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the canonical JSON form of a resolved configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("serializable config"))
}

/// Wall clock and per-stage timings for one command.
pub struct Recorder {
    started: Instant,
    started_unix: f64,
    timings: Vec<StageTiming>,
}

impl Default for Recorder {
    fn default() -> Self {
        Self::new()
    }
}

impl Recorder {
    pub fn new() -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Self { started: Instant::now(), started_unix, timings: Vec::new() }
    }

    /// Times `f`, classifying any library error under `stage`.
    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce() -> sslinfer::Result<T>) -> CliResult<T> {
        let t = Instant::now();
        let out = f();
        self.timings.push(StageTiming { stage: stage.to_string(), seconds: t.elapsed().as_secs_f64() });
        log::debug!("stage {stage}: {:.3}s", t.elapsed().as_secs_f64());
        out.map_err(|e| CliError::from_core(stage, e))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        command: Vec<String>,
        config_hash: String,
        seeds: BTreeMap<String, u64>,
        inputs: BTreeMap<String, String>,
        outputs: Vec<PathBuf>,
        workers: usize,
    ) -> RunManifest {
        RunManifest {
            command,
            cwd: std::env::current_dir().unwrap_or_default(),
            config_hash,
            seeds,
            version: sslinfer::VERSION.to_string(),
            generator: GENERATOR.to_string(),
            inputs,
            outputs,
            workers,
            started_unix: self.started_unix,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            stage_timings: self.timings,
        }
    }
}

/// Reads a standalone manifest or the `manifest` member of a JSON output.
pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: not JSON: {e}", path.display())))?;
    let inner = match value.get("manifest") {
        Some(m) => m.clone(),
        None => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::Config(format!("{}: not a run manifest: {e}", path.display())))
}
