use std::path::PathBuf;

use thiserror::Error;

use crate::bvp::BvpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Primary body named in singularity diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primary {
    Earth,
    Moon,
}

impl std::fmt::Display for Primary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Primary::Earth => f.write_str("Earth"),
            Primary::Moon => f.write_str("Moon"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("position is singular: distance {distance:e} to the {body} center")]
    SingularPosition { body: Primary, distance: f64 },

    #[error("invalid system constants: {0}")]
    InvalidSystem(String),

    #[error("root solve for {point} did not converge on [{lower}, {upper}] after {iterations} iterations (residual {residual:e})")]
    RootNotConverged {
        point: &'static str,
        lower: f64,
        upper: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded {max_steps} steps at t = {t}; tolerance not met")]
    ToleranceNotMet { t: f64, max_steps: usize },

    #[error("epoch {epoch} is outside the trajectory span [{start}, {end}]")]
    OutOfSpan { epoch: f64, start: f64, end: f64 },

    #[error("unknown quantity kind `{0}`")]
    UnknownKind(String),

    #[error("differential correction did not converge after {iterations} iterations (residual {residual:e})")]
    CorrectionNotConverged { iterations: usize, residual: f64 },

    #[error("degenerate LVLH geometry: |r x v| = {0:e}")]
    DegenerateGeometry(f64),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unit mismatch: {0}")]
    UnitMismatch(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("log schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Bvp(#[from] BvpError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status: 2 configuration, 3 solver, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::UnitMismatch(_)
            | Error::UnknownKind(_)
            | Error::InvalidSystem(_)
            | Error::Schema(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
