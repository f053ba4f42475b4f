use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear program is infeasible: {0}")]
    Infeasible(String),

    #[error("{stage} did not converge after {iterations} iterations (violation {violation:.3e})")]
    NoConvergence {
        stage: String,
        iterations: usize,
        violation: f64,
        best_iterate: Vec<f64>,
    },

    #[error("degenerate column {k}: residual variance {tau_sq:.3e}")]
    DegenerateColumn { k: usize, tau_sq: f64 },

    #[error("degenerate variance estimate {value:.6e}")]
    DegenerateVariance { value: f64 },

    #[error("degenerate interval: {0}")]
    DegenerateInterval(String),

    #[error("singular Hessian (condition number {condition:.3e})")]
    SingularHessian { condition: f64 },
}

impl Error {
    /// True for failures that come out of the numerics rather than from
    /// malformed inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Infeasible(_)
                | Error::NoConvergence { .. }
                | Error::DegenerateColumn { .. }
                | Error::DegenerateVariance { .. }
                | Error::DegenerateInterval(_)
                | Error::SingularHessian { .. }
        )
    }

    /// Short machine-readable tag, used in simulation failure records.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Config(_) => "config",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Domain(_) => "domain",
            Error::Infeasible(_) => "infeasible",
            Error::NoConvergence { .. } => "no_convergence",
            Error::DegenerateColumn { .. } => "degenerate_column",
            Error::DegenerateVariance { .. } => "degenerate_variance",
            Error::DegenerateInterval(_) => "degenerate_interval",
            Error::SingularHessian { .. } => "singular_hessian",
        }
    }
}
