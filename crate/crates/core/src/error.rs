use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Model,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },

    #[error("unknown function `{name}` at column {column}")]
    UnknownFunction { name: String, column: usize },

    #[error("unbalanced parentheses at column {column}")]
    UnbalancedParens { column: usize },

    #[error("unbound variable `{0}`")]
    Unbound(String),

    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },

    #[error("line {line}: {message}")]
    ModelFile { line: usize, message: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid rate {value} for {from} -> {to} at m = {m:?}")]
    InvalidRate {
        from: String,
        to: String,
        m: Vec<f64>,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("slot probability {total} out of state `{state}` exceeds 1; increase the time resolution D")]
    SlotOverflow { state: String, total: f64 },

    #[error("limit drift did not converge: last max-norm change {last_change:e} at N = {n}")]
    LimitNotConverged { n: u64, last_change: f64 },

    #[error("Poisson averaging needs {points} lattice points (cap {cap}); use the single-coordinate path or a larger tolerance")]
    LatticeTooLarge { points: f64, cap: f64 },

    #[error("state space has {size} states, above the cap of {cap}")]
    StateSpaceTooLarge { size: f64, cap: usize },

    #[error("uniformization needs {steps} steps (limit 1e9); split the time interval")]
    TooManySteps { steps: f64 },

    #[error("integration left the simplex at t = {t}: component {component} = {value:e}")]
    LeftSimplex { t: f64, component: usize, value: f64 },

    #[error("non-finite field value at t = {t}")]
    NonFinite { t: f64 },

    #[error("{failed} of {total} replications failed; first failure (replication {first_index}): {first}")]
    ReplicationFailures {
        failed: usize,
        total: usize,
        first_index: usize,
        first: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::Syntax { .. }
            | Error::UnknownFunction { .. }
            | Error::UnbalancedParens { .. }
            | Error::Unbound(_)
            | Error::ModelFile { .. }
            | Error::InvalidModel(_)
            | Error::InvalidRate { .. }
            | Error::SlotOverflow { .. } => ErrorKind::Model,
            Error::Domain { .. }
            | Error::LimitNotConverged { .. }
            | Error::LatticeTooLarge { .. }
            | Error::StateSpaceTooLarge { .. }
            | Error::TooManySteps { .. }
            | Error::LeftSimplex { .. }
            | Error::NonFinite { .. } => ErrorKind::Numerical,
            Error::ReplicationFailures { first, .. } => first.kind(),
        }
    }

    /// Short machine-readable tag for the `error: <kind>: <detail>` line.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "syntax",
            Error::UnknownFunction { .. } => "unknown-function",
            Error::UnbalancedParens { .. } => "unbalanced-parens",
            Error::Unbound(_) => "unbound",
            Error::Domain { .. } => "domain",
            Error::ModelFile { .. } => "model-file",
            Error::InvalidModel(_) => "invalid-model",
            Error::InvalidRate { .. } => "invalid-rate",
            Error::InvalidArgument(_) => "usage",
            Error::SlotOverflow { .. } => "slot-overflow",
            Error::LimitNotConverged { .. } => "limit-not-converged",
            Error::LatticeTooLarge { .. } => "lattice-too-large",
            Error::StateSpaceTooLarge { .. } => "state-space-too-large",
            Error::TooManySteps { .. } => "too-many-steps",
            Error::LeftSimplex { .. } => "left-simplex",
            Error::NonFinite { .. } => "non-finite",
            Error::ReplicationFailures { .. } => "replication-failures",
        }
    }
}
