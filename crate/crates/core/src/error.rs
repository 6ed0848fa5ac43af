use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by callers (e.g. the CLI) to map errors to
/// exit codes without matching on every variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or arguments.
    Config,
    /// Problems with input data (files, schemas, shapes).
    Data,
    /// Numerical failure during estimation.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {path}")]
    MissingFile { path: PathBuf },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("column `{name}` not found in CSV header (header: {header:?})")]
    HeaderMismatch { name: String, header: Vec<String> },

    #[error("declared output column `{name}` is absent")]
    OutputColumnMissing { name: String },

    #[error("column `{name}` not found")]
    ColumnNotFound { name: String },

    #[error("table has {got} valid rows, need at least {need}")]
    TooFewRows { need: usize, got: usize },

    #[error("invalid table: {reason}")]
    InvalidTable { reason: String },

    #[error("invalid split: {reason}")]
    InvalidSplit { reason: String },

    #[error("{which} slice of the split is empty")]
    EmptySplit { which: &'static str },

    #[error("standardization stats missing for column `{name}`")]
    StatsMissing { name: String },

    #[error("invalid argument: {reason}")]
    InvalidArgument { reason: String },

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input for `{name}`: {reason}")]
    DegenerateInput { name: String, reason: String },

    #[error("model-fit denominator is zero: reference series is constant")]
    ConstantReference,

    #[error("regressor matrix is rank deficient (rank {rank} of {cols} columns); supply ridge regularization or drop collinear inputs")]
    RankDeficient { rank: usize, cols: usize },

    #[error("estimation diverged at iteration {iteration} (parameter norm {norm:.3e}); last stable iterate had norm {last_stable_norm:.3e}")]
    Divergence {
        iteration: usize,
        norm: f64,
        last_stable_norm: f64,
    },

    #[error("block-Hankel matrix is numerically rank deficient below order {order} (singular-value ratio {ratio:.3e}); try a lower order")]
    HankelRankDeficient { order: usize, ratio: f64 },

    #[error("need at least {need} effective samples for order {order}, got {got}")]
    InsufficientSamples {
        order: usize,
        need: usize,
        got: usize,
    },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig { .. } | InvalidArgument { .. } | InvalidSplit { .. } => {
                ErrorClass::Config
            }
            MissingFile { .. }
            | Io { .. }
            | Csv { .. }
            | HeaderMismatch { .. }
            | OutputColumnMissing { .. }
            | ColumnNotFound { .. }
            | TooFewRows { .. }
            | InvalidTable { .. }
            | EmptySplit { .. }
            | StatsMissing { .. }
            | LengthMismatch { .. }
            | Serde(_) => ErrorClass::Data,
            DegenerateInput { .. }
            | ConstantReference
            | RankDeficient { .. }
            | Divergence { .. }
            | HankelRankDeficient { .. }
            | InsufficientSamples { .. } => ErrorClass::Numerical,
        }
    }
}
