use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trace: Option<Box<crate::newton::NewtonTrace>>,
    },

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error("training diverged at step {step} (loss {loss})")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index} at {input:?}: {source}")]
    Sample {
        index: usize,
        input: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// The innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Sample { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 configuration or input, 3 solver
    /// nonconvergence, 4 training divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::InvalidInput(_) | Error::Malformed { .. } => 2,
            Error::NonConvergence { .. } | Error::SingularJacobian(_) => 3,
            Error::TrainingDiverged { .. } => 4,
            _ => 1,
        }
    }
}
