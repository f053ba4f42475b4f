//! Command-line front end for `sslinfer`: estimation on CSV data,
//! Monte-Carlo runs, Holm adjustment, synthetic data and manifest replay.
//!
//! Exit codes: 0 on success, 1 when a replay does not reproduce its
//! outputs, 2 on configuration or input errors, 3 on numerical failure.

pub mod args;
pub mod estimate;
pub mod generate;
pub mod holm;
pub mod manifest;
pub mod replay;
pub mod simulate;

use std::path::{Path, PathBuf};

pub use args::{Cli, Command};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SSLINFER_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("numerical failure in stage '{stage}': {source}")]
    Numerical {
        stage: String,
        #[source]
        source: sslinfer::Error,
    },
    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Mismatch(_) => 1,
        }
    }

    /// Classifies a library error raised while running `stage`.
    pub fn from_core(stage: &str, e: sslinfer::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical { stage: stage.to_string(), source: e }
        } else {
            CliError::Config(format!("{stage}: {e}"))
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

/// `path` with `suffix` appended to its file name.
pub(crate) fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Numbers separated by commas, whitespace or newlines. Lines starting
/// with `#` are skipped, as is a first line that does not parse (a header).
pub(crate) fn read_numbers(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    let mut first = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> =
            line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => out.extend(values),
            Err(_) if first => {}
            Err(e) => {
                return Err(CliError::Config(format!("{}: line {}: {e}", path.display(), lineno + 1)));
            }
        }
        first = false;
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no numbers found", path.display())));
    }
    Ok(out)
}

/// Worker count after applying the `SSLINFER_THREADS` cap.
pub fn resolve_workers(requested: Option<usize>, env_cap: Option<&str>) -> CliResult<usize> {
    if requested == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut workers = requested.unwrap_or(default);
    if let Some(raw) = env_cap {
        let cap: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
        workers = workers.min(cap);
    }
    Ok(workers)
}

/// Runs one parsed command line. `argv` excludes the program name and is
/// recorded in the manifest.
pub fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    let env_cap = std::env::var(THREADS_ENV).ok();
    let requested = match &cli.command {
        Command::Simulate(a) => a.workers,
        _ => None,
    };
    let workers = resolve_workers(requested, env_cap.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| dispatch(cli.command, argv, workers))
}

fn dispatch(command: Command, argv: Vec<String>, workers: usize) -> CliResult<()> {
    match command {
        Command::Estimate(a) => estimate::run(&a, argv, workers),
        Command::Simulate(a) => simulate::run(&a, argv, workers),
        Command::Holm(a) => holm::run(&a, argv, workers),
        Command::Generate(a) => generate::run(&a, argv, workers),
        Command::Replay(a) => replay::run(&a),
    }
}
