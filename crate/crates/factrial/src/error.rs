//! Error types shared across the crate.

use thiserror::Error;

/// A single rejected input row, with enough context to find it in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based data row number (header not counted).
    pub row: usize,
    pub column: String,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}, column `{}`: {}", self.row, self.column, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header in {file}: {detail}")]
    MalformedHeader { file: String, detail: String },

    #[error("{file}: {} row error(s); first: {}", .errors.len(), .errors[0])]
    RowErrors { file: String, errors: Vec<RowError> },

    #[error("dataset failed validation: {0} hard error(s)")]
    ValidationFailed(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("arm must be in 1..=4, got {0}")]
    InvalidArm(i64),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("logistic fit did not converge after {iterations} iterations (deviance {deviance})")]
    NonConvergence { iterations: usize, deviance: f64 },

    #[error("separation detected: |coefficient| for `{column}` exceeded {guard} on the logit scale")]
    Separation { column: String, guard: f64 },

    #[error("invalid model input: {0}")]
    InvalidInput(String),

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("likelihood ratio statistic is negative beyond tolerance ({0})")]
    NegativeLrt(f64),

    #[error("MEMS denominator is zero for participant `{0}`")]
    ZeroDenominator(String),

    #[error("inverse probability weighting requires a configured covariate list (`ipw_covariates`)")]
    IpwCovariatesMissing,

    #[error("moderator `{column}` is constant in the analyzed rows; its interaction column is collinear")]
    DegenerateModerator { column: String },

    #[error("bootstrap oracle unreliable: {failures} of {total} replicate fits failed")]
    BootstrapUnreliable { failures: usize, total: usize },

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("unknown output format `{0}` (expected json, markdown, or csv)")]
    UnknownFormat(String),

    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("csv write error: {0}")]
    CsvWrite(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
