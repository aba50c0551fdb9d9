//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Item slope must be positive and finite, intercept finite.
    #[error("invalid item parameters: slope={slope}, intercept={intercept}")]
    InvalidItemParams { slope: f64, intercept: f64 },

    /// A quadrature grid needs enough nodes to resolve the latent scale.
    #[error("too few quadrature nodes: {requested} (minimum {minimum})")]
    TooFewNodes { requested: usize, minimum: usize },

    /// No persons, or no observed responses at all.
    #[error("empty data: {0}")]
    EmptyData(String),

    /// Response matrix shape or content violates the dataset contract.
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// One of the two groups has no respondents.
    #[error("group {group} has no respondents")]
    GroupMissing { group: u8 },

    /// Fewer than two items survived screening.
    #[error("too few items after screening: {kept} kept of {initial}")]
    TooFewItems { kept: usize, initial: usize },

    /// EM hit the iteration cap with the score still above tolerance.
    #[error(
        "marginal ML fit did not converge in {iterations} iterations \
         (score max-norm {score_norm:.3e} > tolerance {tolerance:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        tolerance: f64,
    },

    /// Observed information is not invertible; some item is under-identified.
    #[error("singular information matrix (relative eigenvalue {rel_eigenvalue:.3e})")]
    SingularInformation { rel_eigenvalue: f64 },

    /// A fit error, tagged with the group it occurred in.
    #[error("fit failed in {group} group: {source}")]
    GroupFit {
        group: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Every IRLS start failed to converge.
    #[error("robust scaling: no start converged within {max_iter} iterations")]
    NoConvergence { max_iter: usize },

    /// The converged robust solution gives every item weight zero.
    #[error("robust scaling: all items down-weighted to zero")]
    AllDownweighted,

    /// More than the tolerated fraction of replications failed in a condition.
    #[error(
        "simulation condition p={p}: {failures} of {replications} replications failed \
         (limit {limit})"
    )]
    TooManyFailures {
        p: f64,
        failures: usize,
        replications: usize,
        limit: usize,
    },

    /// Bad simulation configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// CSV input does not match the expected wide schema.
    #[error("schema error: {0}")]
    SchemaError(String),

    /// Input file had no data rows.
    #[error("empty file: {0}")]
    EmptyFile(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, printed by the CLI as
    /// `error[CODE]: message`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidItemParams { .. } => "PARAMS",
            Error::TooFewNodes { .. } => "QUADRATURE",
            Error::EmptyData(_) => "EMPTY_DATA",
            Error::InvalidData(_) => "DATA",
            Error::GroupMissing { .. } => "GROUP_MISSING",
            Error::TooFewItems { .. } => "TOO_FEW_ITEMS",
            Error::NonConvergence { .. } => "NO_CONVERGENCE",
            Error::SingularInformation { .. } => "SINGULAR_INFO",
            Error::GroupFit { source, .. } => source.code(),
            Error::NoConvergence { .. } => "ROBUST_NO_CONVERGENCE",
            Error::AllDownweighted => "ALL_DOWNWEIGHTED",
            Error::TooManyFailures { .. } => "TOO_MANY_FAILURES",
            Error::InvalidConfig(_) => "CONFIG",
            Error::SchemaError(_) => "SCHEMA",
            Error::EmptyFile(_) => "EMPTY_FILE",
            Error::Io(_) => "IO",
            Error::Csv(_) => "CSV",
            Error::Json(_) => "JSON",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
