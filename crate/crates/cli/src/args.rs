use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sslinfer::estimators::Method;
use sslinfer::sim::Model;

#[derive(Debug, Clone, Parser)]
#[command(name = "sslinfer", version, about = "Semi-supervised inference for linear functionals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Confidence interval for one linear functional on CSV data.
    Estimate(EstimateArgs),
    /// Monte-Carlo study on Model 1 or Model 2.
    Simulate(SimulateArgs),
    /// Holm step-down adjustment of a list of p-values.
    Holm(HolmArgs),
    /// Writes a synthetic labeled/unlabeled pair of CSV files.
    Generate(GenerateArgs),
    /// Reruns the command recorded in a manifest and compares outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: sslinfer::Error| e.to_string())
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse().map_err(|e: sslinfer::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("functional").required(true).args(["contrast", "component"]))]
pub struct EstimateArgs {
    /// CSV with covariates and the response column.
    #[arg(long)]
    pub labeled: PathBuf,
    /// CSV with the same covariate columns and no response.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 1.0)]
    pub psi: f64,
    /// File holding the p entries of the contrast vector.
    #[arg(long)]
    pub contrast: Option<PathBuf>,
    /// 1-based coordinate of θ.
    #[arg(long)]
    pub component: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: Model,
    #[arg(long)]
    pub n: usize,
    /// Unlabeled to labeled ratio, `N = ratio·n`.
    #[arg(long)]
    pub ratio: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub reps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub psi: f64,
    /// Comma-separated method tags.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_values = ["dlasso1", "dlasso2", "dssl", "sssl"])]
    pub methods: Vec<Method>,
    /// Comma-separated 1-based coordinates of θ to report.
    #[arg(long, value_delimiter = ',', default_values = ["1", "6"])]
    pub components: Vec<usize>,
    /// Additional target read from a file of p contrast entries.
    #[arg(long)]
    pub contrast: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HolmArgs {
    /// File of p-values separated by commas, spaces or newlines.
    #[arg(long)]
    pub input: PathBuf,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: Model,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub ratio: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output prefix; writes `<out>_labeled.csv`, `<out>_unlabeled.csv`
    /// when `ratio > 0`, and `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A manifest file or a JSON output embedding one.
    pub manifest: PathBuf,
    /// Where the rerun writes; defaults to the original output with a
    /// `.replay` suffix.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    /// Makes relative paths absolute against `base`.
    pub fn rebase(&mut self, base: &std::path::Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            Command::Estimate(a) => {
                fix(&mut a.labeled);
                a.unlabeled.as_mut().map(fix);
                a.contrast.as_mut().map(fix);
                fix(&mut a.out);
            }
            Command::Simulate(a) => {
                a.contrast.as_mut().map(fix);
                fix(&mut a.out);
            }
            Command::Holm(a) => {
                fix(&mut a.input);
                a.out.as_mut().map(fix);
            }
            Command::Generate(a) => fix(&mut a.out),
            Command::Replay(a) => {
                fix(&mut a.manifest);
                a.out.as_mut().map(fix);
            }
        }
    }

    /// Replaces the output destination.
    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Estimate(a) => a.out = out,
            Command::Simulate(a) => a.out = out,
            Command::Holm(a) => a.out = Some(out),
            Command::Generate(a) => a.out = out,
            Command::Replay(a) => a.out = Some(out),
        }
    }

    pub fn out(&self) -> Option<&std::path::Path> {
        match self {
            Command::Estimate(a) => Some(&a.out),
            Command::Simulate(a) => Some(&a.out),
            Command::Holm(a) => a.out.as_deref(),
            Command::Generate(a) => Some(&a.out),
            Command::Replay(a) => a.out.as_deref(),
        }
    }
}
