use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("spectral initialization infeasible: {0}")]
    InfeasibleInit(String),

    #[error("integrator blew up at step {step}")]
    StepBlowUp { step: usize },

    #[error("training diverged at step {step} (loss {loss:e})")]
    Divergence { step: usize, loss: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::SvdNoConvergence { .. } => "svd_no_convergence",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::InfeasibleInit(_) => "infeasible_init",
            Error::StepBlowUp { .. } => "step_blow_up",
            Error::Divergence { .. } => "divergence",
            Error::InsufficientData(_) => "insufficient_data",
            Error::ConfigParse { .. } => "config_parse",
            Error::ConfigInvalid { .. } => "config_invalid",
            Error::Pgm(_) => "pgm",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::ConfigInvalid { .. } => 2,
            Error::Io(_) | Error::Pgm(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
